#include "reghnt/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace reghnt {

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Gradients::zero() {
    for (auto& g : grads) g.fill(0.0);
}

void Gradients::add(const Gradients& other) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& a = grads[i].data;
        const auto& b = other.grads[i].data;
        for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    }
}

void Gradients::scale(double s) {
    for (auto& g : grads) {
        for (double& v : g.data) v *= s;
    }
}

Parameter& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols, ParamGroup group) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(rows, cols);
    p->group = group;
    p->index = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParamStore::at(const std::string& name) {
    for (auto& p : params_) {
        if (p->name == name) return *p;
    }
    throw std::out_of_range("no parameter named " + name);
}

const Parameter& ParamStore::at(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return *p;
    }
    throw std::out_of_range("no parameter named " + name);
}

bool ParamStore::contains(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return true;
    }
    return false;
}

std::size_t ParamStore::num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

Gradients ParamStore::make_gradients() const {
    Gradients g;
    g.grads.reserve(params_.size());
    for (const auto& p : params_) g.grads.emplace_back(p->value.rows, p->value.cols);
    return g;
}

void ParamStore::init_uniform(Parameter& p, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.value.data) v = dist(rng);
}

std::vector<Tensor> ParamStore::snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->value);
    return out;
}

void ParamStore::restore(const std::vector<Tensor>& values) {
    if (values.size() != params_.size()) throw std::invalid_argument("snapshot size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) params_[i]->value = values[i];
}

namespace {

constexpr char kMagic[8] = {'R', 'G', 'H', 'N', 'T', 'C', 'K', '1'};

template <typename T>
void write_le(std::ostream& out, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
    auto m = path;
    m += ".json";
    return m;
}

}  // namespace

void ParamStore::save(const std::filesystem::path& path, const nlohmann::json& config) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_le<std::uint64_t>(out, params_.size());
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : params_) {
        write_le<std::uint64_t>(out, p->name.size());
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_le<std::uint64_t>(out, 2);
        write_le<std::uint64_t>(out, p->value.rows);
        write_le<std::uint64_t>(out, p->value.cols);
        for (double v : p->value.data) write_le<double>(out, v);
        tensors.push_back({{"name", p->name}, {"shape", {p->value.rows, p->value.cols}}});
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
    std::ofstream manifest(manifest_path(path));
    manifest << nlohmann::json{{"tensors", tensors}, {"config", config}}.dump(2) << '\n';
}

nlohmann::json ParamStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
    auto count = read_le<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto len = read_le<std::uint64_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(len));
        auto ndims = read_le<std::uint64_t>(in);
        if (ndims != 2) throw std::runtime_error("unsupported tensor rank in checkpoint");
        auto rows = read_le<std::uint64_t>(in);
        auto cols = read_le<std::uint64_t>(in);
        Parameter& p = at(name);
        if (p.value.rows != rows || p.value.cols != cols) throw std::runtime_error("shape mismatch for " + name);
        for (double& v : p.value.data) v = read_le<double>(in);
    }
    nlohmann::json config = nlohmann::json::object();
    std::ifstream manifest(manifest_path(path));
    if (manifest) {
        auto m = nlohmann::json::parse(manifest, nullptr, false);
        if (!m.is_discarded() && m.contains("config")) config = m["config"];
    }
    return config;
}

}  // namespace reghnt
