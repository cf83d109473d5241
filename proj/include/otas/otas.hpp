#pragma once

#include "otas/autograd.hpp"
#include "otas/cfa.hpp"
#include "otas/config.hpp"
#include "otas/dataset.hpp"
#include "otas/errors.hpp"
#include "otas/gradcheck.hpp"
#include "otas/inference.hpp"
#include "otas/io.hpp"
#include "otas/kernels.hpp"
#include "otas/layers.hpp"
#include "otas/loss.hpp"
#include "otas/memory_bank.hpp"
#include "otas/metrics.hpp"
#include "otas/model.hpp"
#include "otas/optimizer.hpp"
#include "otas/postprocess.hpp"
#include "otas/rng.hpp"
#include "otas/stream.hpp"
#include "otas/synth.hpp"
#include "otas/tensor.hpp"
#include "otas/train.hpp"
