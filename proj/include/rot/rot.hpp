#pragma once

// Everything in one include.
#include "rot/answer.hpp"
#include "rot/corpus.hpp"
#include "rot/embedding.hpp"
#include "rot/errors.hpp"
#include "rot/eval.hpp"
#include "rot/graph.hpp"
#include "rot/graph_io.hpp"
#include "rot/hash.hpp"
#include "rot/http.hpp"
#include "rot/llm_client.hpp"
#include "rot/log.hpp"
#include "rot/mock_llm.hpp"
#include "rot/prompt.hpp"
#include "rot/retrieval.hpp"
#include "rot/synthetic.hpp"
#include "rot/text.hpp"
