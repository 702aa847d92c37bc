#pragma once

#include "tamer/corpus.hpp"
#include "tamer/decoding.hpp"
#include "tamer/error.hpp"
#include "tamer/evalkit.hpp"
#include "tamer/gradcheck_suite.hpp"
#include "tamer/model.hpp"
#include "tamer/nn/checkpoint.hpp"
#include "tamer/nn/gradcheck.hpp"
#include "tamer/nn/ops.hpp"
#include "tamer/nn/optim.hpp"
#include "tamer/pipeline.hpp"
#include "tamer/rng.hpp"
#include "tamer/train.hpp"
#include "tamer/treebank.hpp"
#include "tamer/vocab.hpp"
