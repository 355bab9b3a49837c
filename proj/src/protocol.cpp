#include "behaveformer/protocol.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace bf {

ProtocolResult run_verification_protocol(BehaveFormerParams& params, const FeatureStore& store,
                                         const std::vector<std::string>& users, int enroll) {
  if (enroll < 1) throw std::invalid_argument("run_verification_protocol: enroll must be >= 1");
  const bool dual = params.imu.has_value();
  if (dual && store.sensors.empty()) {
    throw std::invalid_argument("run_verification_protocol: model expects IMU features");
  }

  struct UserData {
    EnrollmentProfile profile;
    std::vector<Vector> verification;
    std::vector<Scalar> verification_times;
  };
  std::map<std::string, UserData> data;
  ProtocolResult out;

  for (const std::string& user : users) {
    const auto sessions = store.of_user(user);
    if (sessions.size() < 2) continue;  // needs one enrollment and one verification
    const std::size_t e = std::min<std::size_t>(static_cast<std::size_t>(enroll), sessions.size() - 1);
    UserData ud;
    ud.profile.user = user;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      const SessionFeatures* s = sessions[i];
      Vector emb = embed_sequence(params, s->keystroke, dual ? &s->imu.value() : nullptr);
      if (i < e) {
        ud.profile.embeddings.push_back(std::move(emb));
      } else {
        ud.verification.push_back(emb);
        ud.verification_times.push_back(s->end_time);
        out.embeddings.push_back(std::move(emb));
        out.embedding_labels.push_back(user);
      }
    }
    data[user] = std::move(ud);
  }
  if (data.size() < 2) {
    throw std::invalid_argument("run_verification_protocol: need at least two users with 2+ sessions");
  }

  for (auto& [claimed, claimed_data] : data) {
    UserScores per_user{claimed, {}, {}};
    for (auto& [actor, actor_data] : data) {
      ScoredTimeline tl;
      tl.claimed_user = claimed;
      const SampleLabel label = actor == claimed ? SampleLabel::Genuine : SampleLabel::Impostor;
      for (std::size_t i = 0; i < actor_data.verification.size(); ++i) {
        const Scalar score = verification_score(claimed_data.profile, actor_data.verification[i]);
        tl.samples.push_back({actor_data.verification_times[i], score, label});
        out.records.push_back({claimed, label, score});
        if (label == SampleLabel::Genuine) {
          out.genuine.push_back(score);
          per_user.genuine.push_back(score);
        } else {
          out.impostor.push_back(score);
          per_user.impostor.push_back(score);
        }
      }
      std::sort(tl.samples.begin(), tl.samples.end(),
                [](const ScoredSample& a, const ScoredSample& b) { return a.timestamp < b.timestamp; });
      out.timelines.push_back(std::move(tl));
    }
    out.per_user.push_back(std::move(per_user));
  }
  out.det = compute_det(out.genuine, out.impostor);
  return out;
}

}  // namespace bf
