#include "reghnt/config.hpp"

#include <cstdio>
#include <stdexcept>

namespace reghnt {

void ModelConfig::validate() const {
    if (d == 0 || heads == 0 || vocab == 0 || ffn_mult == 0) throw std::invalid_argument("model sizes must be positive");
    if (d % heads != 0) throw std::invalid_argument("d must be divisible by heads");
    if (d % 2 != 0) throw std::invalid_argument("d must be even for the BiLSTM halves");
    if (op_classes != 2 && op_classes != 4) throw std::invalid_argument("op_classes must be 2 or 4");
    if (feature_dropout < 0 || feature_dropout >= 1 || recurrent_dropout < 0 || recurrent_dropout >= 1)
        throw std::invalid_argument("dropout must lie in [0, 1)");
    if (max_len < 1 || beam < 1) throw std::invalid_argument("max_len and beam must be positive");
}

void TrainConfig::validate() const {
    if (lr_embedding < 0 || lr_other < 0 || wd_embedding < 0 || wd_other < 0)
        throw std::invalid_argument("learning rates and weight decays must be non-negative");
    if (warmup_ratio < 0 || warmup_ratio >= 1) throw std::invalid_argument("warmup_ratio must lie in [0, 1)");
    if (batch_size == 0 || epochs == 0 || threads == 0) throw std::invalid_argument("batch_size, epochs and threads must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"d", c.d},
            {"heads", c.heads},
            {"layers", c.layers},
            {"vocab", c.vocab},
            {"ffn_mult", c.ffn_mult},
            {"hash_seed", c.hash_seed},
            {"init_seed", c.init_seed},
            {"type_pooling", c.type_pooling},
            {"shared_relations", c.shared_relations},
            {"intra", c.intra},
            {"inter", c.inter},
            {"op_classes", c.op_classes},
            {"feature_dropout", c.feature_dropout},
            {"recurrent_dropout", c.recurrent_dropout},
            {"max_len", c.max_len},
            {"beam", c.beam},
            {"tag_spans", c.tag_spans}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d", c.d);
    get("heads", c.heads);
    get("layers", c.layers);
    get("vocab", c.vocab);
    get("ffn_mult", c.ffn_mult);
    get("hash_seed", c.hash_seed);
    get("init_seed", c.init_seed);
    get("type_pooling", c.type_pooling);
    get("shared_relations", c.shared_relations);
    get("intra", c.intra);
    get("inter", c.inter);
    get("op_classes", c.op_classes);
    get("feature_dropout", c.feature_dropout);
    get("recurrent_dropout", c.recurrent_dropout);
    get("max_len", c.max_len);
    get("beam", c.beam);
    get("tag_spans", c.tag_spans);
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr_embedding", c.lr_embedding}, {"lr_other", c.lr_other},     {"wd_embedding", c.wd_embedding},
            {"wd_other", c.wd_other},         {"warmup_ratio", c.warmup_ratio}, {"beta1", c.beta1},
            {"beta2", c.beta2},               {"adam_eps", c.adam_eps},     {"clip_norm", c.clip_norm},
            {"batch_size", c.batch_size},     {"epochs", c.epochs},         {"seed", c.seed},
            {"threads", c.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("lr_embedding", c.lr_embedding);
    get("lr_other", c.lr_other);
    get("wd_embedding", c.wd_embedding);
    get("wd_other", c.wd_other);
    get("warmup_ratio", c.warmup_ratio);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("clip_norm", c.clip_norm);
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("seed", c.seed);
    get("threads", c.threads);
    c.validate();
    return c;
}

std::string config_hash(const nlohmann::json& j) { return fnv1a_hex(j.dump()); }

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace reghnt
