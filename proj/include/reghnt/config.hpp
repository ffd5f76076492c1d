#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "reghnt/graph.hpp"

namespace reghnt {

struct ModelConfig {
    std::size_t d = 64;
    std::size_t heads = 8;
    std::size_t layers = 8;
    std::size_t vocab = 50021;
    std::size_t ffn_mult = 4;
    std::uint64_t hash_seed = 0x5eedULL;
    std::uint64_t init_seed = 42;
    bool type_pooling = true;
    // Relation embeddings are owned per layer unless shared.
    bool shared_relations = false;
    bool intra = true;
    bool inter = true;
    // 2: {Arithmetic, SpanExtraction}; 4: the dataset answer types.
    std::size_t op_classes = 2;
    double feature_dropout = 0.1;
    double recurrent_dropout = 0.2;
    std::size_t max_len = 40;
    std::size_t beam = 3;
    // Span questions answered by per-node tagging instead of the tree decoder.
    bool tag_spans = false;

    GraphOptions graph_options() const {
        GraphOptions o;
        o.intra = intra;
        o.inter = inter;
        return o;
    }
    // Throws std::invalid_argument on inconsistent values.
    void validate() const;
};

struct TrainConfig {
    double lr_embedding = 1e-5;
    double lr_other = 1e-4;
    double wd_embedding = 0.01;
    double wd_other = 5e-5;
    double warmup_ratio = 0.06;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Stable 64-bit FNV-1a hex digest of raw bytes.
std::string fnv1a_hex(std::string_view bytes);
// Digest of a JSON document's canonical dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace reghnt
