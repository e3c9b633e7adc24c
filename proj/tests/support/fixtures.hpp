#pragma once

// Shared setup for engine, harness and service tests: the shipped dataset
// indexed with the default hash embedder.

#include <memory>

#include "oracles.hpp"
#include "sonoagent/embedding.hpp"
#include "sonoagent/eval_harness.hpp"
#include "sonoagent/knowledge_store.hpp"

namespace fixture {

inline const sonoagent::KnowledgeDataset& shipped_dataset() {
    static const auto ds = sonoagent::load_dataset(oracle::source_dir() / "data");
    return ds;
}

inline std::shared_ptr<const sonoagent::KnowledgeIndex> shipped_index() {
    static const auto index =
        sonoagent::build_index(shipped_dataset(), std::make_shared<sonoagent::HashEmbedder>());
    return index;
}

inline const std::string kCarotid = "Perform a carotid artery ultrasound scan";

}  // namespace fixture
