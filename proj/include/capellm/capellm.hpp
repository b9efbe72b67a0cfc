#pragma once

#include "capellm/core/adamw.hpp"
#include "capellm/core/autograd.hpp"
#include "capellm/core/checkpoint.hpp"
#include "capellm/core/layers.hpp"
#include "capellm/core/ops.hpp"
#include "capellm/core/parameter.hpp"
#include "capellm/core/tensor.hpp"
#include "capellm/data/dataset.hpp"
#include "capellm/data/evaluate.hpp"
#include "capellm/data/metrics.hpp"
#include "capellm/data/synthetic.hpp"
#include "capellm/decode/generate.hpp"
#include "capellm/decode/inference.hpp"
#include "capellm/decode/strategy.hpp"
#include "capellm/density/density.hpp"
#include "capellm/instruct/conversation.hpp"
#include "capellm/instruct/pairing.hpp"
#include "capellm/instruct/prompt.hpp"
#include "capellm/instruct/registry.hpp"
#include "capellm/model/config.hpp"
#include "capellm/model/model.hpp"
#include "capellm/model/session.hpp"
#include "capellm/text/coords.hpp"
#include "capellm/text/posterior.hpp"
#include "capellm/text/vocabulary.hpp"
#include "capellm/train/trainer.hpp"
