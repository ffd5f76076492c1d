#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace reghnt {

// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    static Tensor row(std::vector<double> values) {
        Tensor t;
        t.rows = 1;
        t.cols = values.size();
        t.data = std::move(values);
        return t;
    }

    std::size_t size() const { return data.size(); }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Tensor&) const = default;
};

enum class ParamGroup {
    Embedding,  // the hashed token table; trained with the slower encoder schedule
    Other,
};

struct Parameter {
    std::string name;
    Tensor value;
    ParamGroup group = ParamGroup::Other;
    std::size_t index = 0;
};

// Gradient buffers aligned with a ParamStore's parameters.
struct Gradients {
    std::vector<Tensor> grads;
    void zero();
    void add(const Gradients& other);
    void scale(double s);
};

class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Parameter& add(const std::string& name, std::size_t rows, std::size_t cols, ParamGroup group = ParamGroup::Other);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }
    std::size_t num_scalars() const;

    Gradients make_gradients() const;

    // uniform(-1/sqrt(fan), 1/sqrt(fan)) on matrices listed by `uniform_names`
    // is done by the owning modules; this helper fills one parameter.
    static void init_uniform(Parameter& p, double bound, std::mt19937_64& rng);

    // Checkpoint: binary file of named little-endian f64 tensors plus a JSON manifest.
    void save(const std::filesystem::path& path, const nlohmann::json& config) const;
    // Loads values by name; every stored parameter must exist with the same shape.
    nlohmann::json load(const std::filesystem::path& path);

    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& values);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace reghnt
