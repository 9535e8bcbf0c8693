#pragma once

#include "align_lab/alignment.hpp"
#include "align_lab/checks.hpp"
#include "align_lab/errors.hpp"
#include "align_lab/experiments.hpp"
#include "align_lab/fastdyn.hpp"
#include "align_lab/gradcheck.hpp"
#include "align_lab/linalg.hpp"
#include "align_lab/minnorm.hpp"
#include "align_lab/mnist.hpp"
#include "align_lab/network.hpp"
#include "align_lab/report.hpp"
#include "align_lab/rng.hpp"
#include "align_lab/structured.hpp"
