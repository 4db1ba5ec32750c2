#pragma once

#include "patchlens/analyses.hpp"
#include "patchlens/bpe.hpp"
#include "patchlens/corpus.hpp"
#include "patchlens/editcodec.hpp"
#include "patchlens/lexer.hpp"
#include "patchlens/metrics.hpp"
#include "patchlens/mining.hpp"
#include "patchlens/model/checkpoint.hpp"
#include "patchlens/model/config.hpp"
#include "patchlens/model/data.hpp"
#include "patchlens/model/decode.hpp"
#include "patchlens/model/train.hpp"
#include "patchlens/model/transformer.hpp"
#include "patchlens/text.hpp"
