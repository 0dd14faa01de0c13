#pragma once

// Everything except the HTTP backends (qualcode/remote.hpp).

#include "qualcode/chunking.hpp"
#include "qualcode/config.hpp"
#include "qualcode/corpus_stats.hpp"
#include "qualcode/embeddings.hpp"
#include "qualcode/error.hpp"
#include "qualcode/evaluation.hpp"
#include "qualcode/generation.hpp"
#include "qualcode/json_io.hpp"
#include "qualcode/pipeline.hpp"
#include "qualcode/prompts.hpp"
#include "qualcode/refusals.hpp"
#include "qualcode/reports.hpp"
#include "qualcode/run_record.hpp"
#include "qualcode/topics.hpp"
#include "qualcode/transcripts.hpp"
