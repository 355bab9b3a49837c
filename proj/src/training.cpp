#include "behaveformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "behaveformer/optim.hpp"
#include "behaveformer/protocol.hpp"

namespace bf {

Var triplet_loss(Graph& g, Var anchor, Var positive, Var negative, Scalar margin) {
  if (margin <= 0.0) throw std::invalid_argument("triplet_loss: margin must be positive");
  Var d_ap = euclidean_distance(anchor, positive);
  Var d_an = euclidean_distance(anchor, negative);
  return relu(add(sub(d_ap, d_an), g.scalar(margin)));
}

Scalar triplet_loss_value(const Vector& anchor, const Vector& positive, const Vector& negative,
                          Scalar margin) {
  Graph g(Mode::Eval);
  return triplet_loss(g, g.input(anchor), g.input(positive), g.input(negative), margin).value()(0, 0);
}

std::vector<Triplet> sample_triplets(const FeatureStore& store,
                                     const std::vector<std::string>& users, int batch_users,
                                     std::mt19937_64& rng) {
  std::vector<std::pair<std::string, std::vector<const SessionFeatures*>>> eligible;
  for (const std::string& u : users) {
    auto sessions = store.of_user(u);
    if (sessions.size() >= 2) eligible.emplace_back(u, std::move(sessions));
  }
  if (eligible.size() < 2) {
    throw std::invalid_argument("sample_triplets: need at least 2 users with 2+ sequences, have " +
                                std::to_string(eligible.size()));
  }
  for (std::size_t i = eligible.size(); i > 1; --i) {
    std::swap(eligible[i - 1], eligible[static_cast<std::size_t>(rng() % i)]);
  }
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(std::max(batch_users, 2)),
                                                  eligible.size());

  std::vector<Triplet> out;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto& [user, sessions] = eligible[i];
    const std::size_t n = sessions.size();
    const std::size_t a = static_cast<std::size_t>(rng() % n);
    std::size_t p = static_cast<std::size_t>(rng() % (n - 1));
    if (p >= a) ++p;

    std::size_t v = static_cast<std::size_t>(rng() % (batch - 1));
    if (v >= i) ++v;
    const auto& neg_sessions = eligible[v].second;
    const std::size_t ns = static_cast<std::size_t>(rng() % neg_sessions.size());
    out.push_back({sessions[a], sessions[p], neg_sessions[ns]});
  }
  return out;
}

namespace {

void check_store_compat(const BehaveFormerParams& params, const FeatureStore& store,
                        const char* what) {
  const StdatConfig& kc = params.config.keystroke;
  if (kc.seq_len != store.window || kc.channels != store.keystroke_channels()) {
    throw std::invalid_argument(std::string(what) + ": keystroke tower expects " +
                                std::to_string(kc.seq_len) + "x" + std::to_string(kc.channels) +
                                ", feature store provides " + std::to_string(store.window) + "x" +
                                std::to_string(store.keystroke_channels()));
  }
  if (params.config.imu) {
    if (store.sensors.empty()) {
      throw std::invalid_argument(std::string(what) + ": model has an IMU tower but the feature "
                                                      "store carries no IMU features");
    }
    const StdatConfig& ic = *params.config.imu;
    if (ic.seq_len != kImuRows || ic.channels != store.imu_channels()) {
      throw std::invalid_argument(std::string(what) + ": IMU tower expects " +
                                  std::to_string(ic.seq_len) + "x" + std::to_string(ic.channels) +
                                  ", feature store provides " + std::to_string(kImuRows) + "x" +
                                  std::to_string(store.imu_channels()));
    }
  }
}

Scalar validation_eer(BehaveFormerParams& params, const FeatureStore& store,
                      const TrainConfig& config) {
  return run_verification_protocol(params, store, store.splits.validation, config.enroll).det.eer;
}

}  // namespace

TrainResult train(BehaveFormerParams params, const FeatureStore& store, const TrainConfig& config) {
  check_store_compat(params, store, "train");
  TrainResult result;
  result.params = params;
  if (config.epochs <= 0) return result;

  const bool dual = params.imu.has_value();
  std::vector<std::string> train_users;
  std::size_t train_sessions = 0;
  for (const std::string& u : store.splits.train) {
    const std::size_t n = store.of_user(u).size();
    if (n >= 2) {
      train_users.push_back(u);
      train_sessions += n;
    }
  }
  if (train_users.size() < 2) {
    throw std::invalid_argument("train: need at least 2 training users with 2+ sequences");
  }
  if (store.splits.validation.size() < 2) {
    throw std::invalid_argument("train: need a validation split with at least 2 users");
  }

  const int batches_per_epoch =
      config.batches_per_epoch > 0
          ? config.batches_per_epoch
          : static_cast<int>((train_sessions + config.batch_users - 1) /
                             static_cast<std::size_t>(config.batch_users));

  std::mt19937_64 rng(config.seed);
  AdamState adam;
  adam.config.lr = config.learning_rate;

  // Trainable parameter table in visit order, minus frozen prefixes.
  NamedParams trainable;
  visit_params(params, [&](const std::string& name, Matrix& m, ParamKind kind) {
    if (kind != ParamKind::Trainable) return;
    for (const std::string& p : config.frozen_prefixes)
      if (name.rfind(p, 0) == 0) return;
    trainable.emplace_back(name, &m);
  });

  int epochs_since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Scalar epoch_loss = 0.0;
    std::size_t triplet_count = 0;
    try {
      for (int b = 0; b < batches_per_epoch; ++b) {
        const std::vector<Triplet> batch = sample_triplets(store, train_users, config.batch_users, rng);
        GradMap grads;
        for (const auto& [name, m] : trainable) grads[name] = Matrix::Zero(m->rows(), m->cols());

        for (const Triplet& t : batch) {
          Graph g(Mode::Train, rng());
          BoundModel bound = bind_model(g, params, config.frozen_prefixes);
          const auto forward = [&](const SessionFeatures* s) {
            std::optional<Var> ximu;
            if (dual) ximu = g.input(s->imu.value());
            return behaveformer_forward(g, g.input(s->keystroke), ximu, bound);
          };
          Var loss = triplet_loss(g, forward(t.anchor), forward(t.positive), forward(t.negative),
                                  config.margin);
          epoch_loss += loss.value()(0, 0);
          ++triplet_count;
          g.backward(loss);
          for (const auto& [name, var] : bound.slots) grads[name] += g.grad(var);
        }
        const Scalar inv = 1.0 / static_cast<Scalar>(batch.size());
        for (auto& [name, grad] : grads) grad *= inv;
        adam_step(trainable, grads, adam);
      }
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<Scalar>(triplet_count);
    rec.val_eer = validation_eer(params, store, config);
    result.history.push_back(rec);

    if (result.history.size() == 1 || rec.val_eer < result.best_val_eer) {
      result.best_val_eer = rec.val_eer;
      result.best_epoch = epoch;
      result.params = params;
      epochs_since_best = 0;
    } else {
      if (rec.val_eer == result.best_val_eer) {
        // Ties keep the most-trained checkpoint but still count toward patience.
        result.best_epoch = epoch;
        result.params = params;
      }
      if (++epochs_since_best >= config.patience) break;
    }
  }
  return result;
}

TrainResult fine_tune(const Checkpoint& checkpoint, const FeatureStore& store,
                      const TrainConfig& config) {
  check_store_compat(checkpoint.params, store, "fine_tune");
  return train(checkpoint.params, store, config);
}

void save_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_history: cannot write " + path.string());
  out << "epoch,train_loss,val_eer\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.val_eer) << '\n';
  }
}

}  // namespace bf
