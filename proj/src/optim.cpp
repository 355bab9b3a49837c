#include "behaveformer/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace bf {

void adam_step(const NamedParams& params, const GradMap& grads, AdamState& state) {
  state.step_count += 1;
  const Scalar t = static_cast<Scalar>(state.step_count);
  const AdamConfig& c = state.config;
  const Scalar bc1 = 1.0 - std::pow(c.beta1, t);
  const Scalar bc2 = 1.0 - std::pow(c.beta2, t);

  for (const auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) {
      throw std::invalid_argument("adam_step: missing gradient for parameter '" + name + "'");
    }
    const Matrix& g = git->second;
    if (g.rows() != p->rows() || g.cols() != p->cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for parameter '" + name + "'");
    }
    AdamState::Slot& slot = state.slots[name];
    if (slot.m.size() == 0) {
      slot.m = Matrix::Zero(p->rows(), p->cols());
      slot.v = Matrix::Zero(p->rows(), p->cols());
    } else if (slot.m.rows() != p->rows() || slot.m.cols() != p->cols()) {
      throw std::invalid_argument("adam_step: state shape mismatch for parameter '" + name + "'");
    }
    slot.m = c.beta1 * slot.m + (1.0 - c.beta1) * g;
    slot.v = c.beta2 * slot.v + (1.0 - c.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = slot.m / bc1;
    const Matrix v_hat = slot.v / bc2;
    p->array() -= c.lr * m_hat.array() / (v_hat.array().sqrt() + c.eps);
  }
}

}  // namespace bf
