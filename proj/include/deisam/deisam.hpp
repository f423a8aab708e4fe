#pragma once

#include "deisam/error.hpp"
#include "deisam/rng.hpp"
#include "deisam/logic.hpp"
#include "deisam/scene.hpp"
#include "deisam/grounding.hpp"
#include "deisam/reasoner.hpp"
#include "deisam/unifier.hpp"
#include "deisam/net.hpp"
#include "deisam/rulegen.hpp"
#include "deisam/embedding_client.hpp"
#include "deisam/eval.hpp"
#include "deisam/deivg.hpp"
#include "deisam/deiclevr.hpp"
#include "deisam/training.hpp"
#include "deisam/pipeline.hpp"

namespace deisam {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace deisam
