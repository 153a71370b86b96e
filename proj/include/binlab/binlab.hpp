#pragma once

#include "binlab/archive.hpp"
#include "binlab/autograd.hpp"
#include "binlab/classical.hpp"
#include "binlab/config.hpp"
#include "binlab/dataset.hpp"
#include "binlab/error.hpp"
#include "binlab/image.hpp"
#include "binlab/image_io.hpp"
#include "binlab/inference.hpp"
#include "binlab/losses.hpp"
#include "binlab/metrics.hpp"
#include "binlab/networks.hpp"
#include "binlab/optim.hpp"
#include "binlab/random.hpp"
#include "binlab/report.hpp"
#include "binlab/tensor.hpp"
#include "binlab/toy_alignment.hpp"
#include "binlab/trainer.hpp"
