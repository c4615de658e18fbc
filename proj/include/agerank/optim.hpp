#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "agerank/checkpoint.hpp"
#include "agerank/tensor.hpp"

namespace agerank {

/// lr = initial * decay^(number of milestones reached). Milestone k sits at
/// epoch round(fraction_k * total_epochs); epochs are 0-based.
inline double scheduled_lr(double initial, double decay, const std::vector<double>& fractions, std::size_t epoch,
                           std::size_t total_epochs) {
  double lr = initial;
  for (double f : fractions)
    if (epoch >= static_cast<std::size_t>(std::llround(f * static_cast<double>(total_epochs)))) lr *= decay;
  return lr;
}

namespace detail {
template <typename T>
void check_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
                const std::vector<Tensor<T>>& buffers, const char* op) {
  if (params.size() != grads.size() || params.size() != buffers.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(buffers.size()) + " buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != buffers[i].shape()) {
      throw ShapeError(std::string(op) + ": parameter " + std::to_string(i) + " has shape " +
                       to_string(params[i]->shape()) + ", gradient " + to_string(grads[i]->shape()));
    }
    if (!grads[i]->all_finite()) {
      throw NonFiniteError(std::string(op) + ": non-finite gradient for parameter " + std::to_string(i));
    }
  }
}
}  // namespace detail

/// SGD with heavy-ball momentum: b <- m*b + g; p <- p - lr*b.
template <typename T>
struct Sgd {
  double lr = 0.1;
  double momentum = 0.0;
  std::vector<Tensor<T>> buffers;

  Sgd() = default;
  Sgd(double lr_, double momentum_) : lr(lr_), momentum(momentum_) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd: lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must lie in [0,1)");
  }

  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (buffers.empty())
      for (auto* p : params) buffers.emplace_back(p->shape(), T{0});
    detail::check_step(params, grads, buffers, "sgd_step");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& b = buffers[i];
      auto& p = *params[i];
      const auto& g = *grads[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        b[k] = static_cast<T>(momentum * b[k] + g[k]);
        p[k] = static_cast<T>(p[k] - lr * b[k]);
      }
    }
  }

  void save_to(Checkpoint& c, const std::string& prefix) const {
    c.header[prefix] = {{"kind", "sgd"}, {"lr", lr}, {"momentum", momentum}, {"buffers", buffers.size()}};
    for (std::size_t i = 0; i < buffers.size(); ++i) c.put(prefix + "/b" + std::to_string(i), buffers[i].template cast<float>());
  }

  void load_from(const Checkpoint& c, const std::string& prefix) {
    const auto& h = c.header.at(prefix);
    lr = h.at("lr").get<double>();
    momentum = h.at("momentum").get<double>();
    buffers.clear();
    for (std::size_t i = 0; i < h.at("buffers").get<std::size_t>(); ++i)
      buffers.push_back(c.get(prefix + "/b" + std::to_string(i)).template cast<T>());
  }
};

/// Adam with bias correction.
template <typename T>
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t steps = 0;
  std::vector<Tensor<T>> m, v;

  Adam() = default;
  explicit Adam(double lr_) : lr(lr_) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
  }

  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (m.empty()) {
      for (auto* p : params) {
        m.emplace_back(p->shape(), T{0});
        v.emplace_back(p->shape(), T{0});
      }
    }
    detail::check_step(params, grads, m, "adam_step");
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto& g = *grads[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double mk = beta1 * m[i][k] + (1.0 - beta1) * g[k];
        const double vk = beta2 * v[i][k] + (1.0 - beta2) * static_cast<double>(g[k]) * g[k];
        m[i][k] = static_cast<T>(mk);
        v[i][k] = static_cast<T>(vk);
        p[k] = static_cast<T>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
      }
    }
  }

  void save_to(Checkpoint& c, const std::string& prefix) const {
    c.header[prefix] = {{"kind", "adam"}, {"lr", lr}, {"beta1", beta1}, {"beta2", beta2},
                        {"eps", eps},     {"steps", steps}, {"buffers", m.size()}};
    for (std::size_t i = 0; i < m.size(); ++i) {
      c.put(prefix + "/m" + std::to_string(i), m[i].template cast<float>());
      c.put(prefix + "/v" + std::to_string(i), v[i].template cast<float>());
    }
  }

  void load_from(const Checkpoint& c, const std::string& prefix) {
    const auto& h = c.header.at(prefix);
    lr = h.at("lr").get<double>();
    beta1 = h.at("beta1").get<double>();
    beta2 = h.at("beta2").get<double>();
    eps = h.at("eps").get<double>();
    steps = h.at("steps").get<std::uint64_t>();
    m.clear();
    v.clear();
    for (std::size_t i = 0; i < h.at("buffers").get<std::size_t>(); ++i) {
      m.push_back(c.get(prefix + "/m" + std::to_string(i)).template cast<T>());
      v.push_back(c.get(prefix + "/v" + std::to_string(i)).template cast<T>());
    }
  }
};

}  // namespace agerank
