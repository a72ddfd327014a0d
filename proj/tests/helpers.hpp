#pragma once

#include <cmath>
#include <vector>

#include "seca/config.hpp"
#include "seca/encoder.hpp"
#include "seca/rng.hpp"

namespace seca::test {

inline Tensor random_tensor(num::Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.span()) v = scale * rng.normal();
    return t;
}

inline std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

inline std::vector<double> unit(std::vector<double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

inline EncoderConfig small_encoder(std::size_t d = 8, std::uint64_t seed = 1) {
    EncoderConfig c;
    c.d_v = d;
    c.d_t = d;
    c.layers = 2;
    c.adapter_width = 4;
    c.prompt_tokens = 2;
    c.seed = seed;
    return c;
}

/// Encoder whose class tokens come from `classes` round-robin superclasses.
inline Encoder make_test_encoder(const EncoderConfig& cfg, std::size_t classes, double rho = 0.5,
                                 std::size_t groups = 2) {
    std::vector<std::size_t> sup(classes);
    for (std::size_t k = 0; k < classes; ++k) sup[k] = k % groups;
    return Encoder(cfg, ClassTokenTable(cfg.d_t, sup, rho, cfg.seed + 17));
}

/// Adapter stack with a non-zero up projection so every weight matters.
inline AdapterStack random_adapter(const EncoderConfig& cfg, std::uint64_t seed, double scale = 0.3) {
    AdapterStack a = AdapterStack::init(cfg, seed);
    Rng rng(seed * 7 + 3);
    for (auto& l : a.layers())
        for (double& v : l.up.value.span()) v = scale * rng.normal();
    return a;
}

/// Small, fast run configuration on the synthetic stream.
inline RunConfig tiny_run(std::size_t tasks = 3, std::size_t classes_per_task = 2, std::size_t d = 16) {
    RunConfig c;
    c.data.synthetic.num_tasks = tasks;
    c.data.synthetic.classes_per_task = classes_per_task;
    c.data.synthetic.dim = d;
    c.data.synthetic.superclasses = 2;
    c.data.synthetic.train_per_class = 8;
    c.data.synthetic.test_per_class = 4;
    c.encoder.d_v = d;
    c.encoder.d_t = d;
    c.encoder.layers = 2;
    c.encoder.adapter_width = 4;
    c.encoder.prompt_tokens = 2;
    c.train.epochs = 2;
    c.train.batch_size = 4;
    c.train.pool_max = 2;
    c.finalize();
    return c;
}

}  // namespace seca::test
