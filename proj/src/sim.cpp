#include "loopkit/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace loopkit {

namespace {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Pose place_pose(const SimConfig& cfg, int place) {
  const double radius = cfg.place_count * cfg.place_spacing / (2.0 * M_PI);
  const double theta = 2.0 * M_PI * double(place) / double(cfg.place_count);
  const Vec3 t(radius * std::cos(theta), radius * std::sin(theta), 0.0);
  return {Quat(Eigen::AngleAxisd(theta + M_PI / 2.0, Vec3::UnitZ())), t};
}

Pose noise_pose(double sigma_trans, double sigma_rot, bool planar, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Twist tw;
  if (planar) {
    tw.rotational = Vec3(0, 0, sigma_rot * n(rng));
    tw.translational = Vec3(sigma_trans * n(rng), sigma_trans * n(rng), 0);
  } else {
    for (int k = 0; k < 3; ++k) tw.rotational(k) = sigma_rot * n(rng);
    for (int k = 0; k < 3; ++k) tw.translational(k) = sigma_trans * n(rng);
  }
  return se3_exp(tw);
}

}  // namespace

Eigen::VectorXd random_unit_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim; ++i) v(i) = n(rng);
    norm = v.norm();
  } while (norm < 1e-12);
  return v / norm;
}

void SimConfig::validate() const {
  if (descriptor_dim < 1 || place_count < 1 || frames < 0 || place_spacing <= 0 || frame_dt <= 0) {
    throw std::invalid_argument("SimConfig: sizes must be positive");
  }
  if (odom_sigma_trans < 0 || odom_sigma_rot < 0 || descriptor_sigma < 0 || loop_sigma_trans < 0 ||
      loop_sigma_rot < 0 || outlier_rate < 0 || outlier_rate > 1) {
    throw std::invalid_argument("SimConfig: noise levels must be non-negative");
  }
  int prev_end = -1;
  for (const auto& k : kidnaps) {
    if (k.frame <= prev_end || k.frame < 1) {
      throw std::invalid_argument(fmt::format("SimConfig: kidnap at frame {} overlaps or precedes the previous one", k.frame));
    }
    if (k.duration < 1 || k.teleport_to < 0 || k.teleport_to >= place_count) {
      throw std::invalid_argument(fmt::format("SimConfig: kidnap at frame {} has invalid duration or place", k.frame));
    }
    prev_end = k.frame + k.duration;
  }
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  SimConfig c;
  c.seed = j.value("seed", c.seed);
  c.descriptor_dim = j.value("descriptor_dim", c.descriptor_dim);
  c.place_count = j.value("place_count", c.place_count);
  c.place_spacing = j.value("place_spacing", c.place_spacing);
  c.frames = j.value("frames", c.frames);
  c.start_place = j.value("start_place", c.start_place);
  c.frame_dt = j.value("frame_dt", c.frame_dt);
  c.planar = j.value("planar", c.planar);
  c.odom_sigma_trans = j.value("odom_sigma_trans", c.odom_sigma_trans);
  c.odom_sigma_rot = j.value("odom_sigma_rot", c.odom_sigma_rot);
  c.descriptor_sigma = j.value("descriptor_sigma", c.descriptor_sigma);
  if (j.contains("kidnaps")) {
    for (const auto& k : j.at("kidnaps")) {
      c.kidnaps.push_back({k.at("frame").get<int>(), k.at("teleport_to").get<int>(), k.value("duration", 10)});
    }
  }
  c.nominal_features = j.value("nominal_features", c.nominal_features);
  c.feature_jitter = j.value("feature_jitter", c.feature_jitter);
  c.kidnap_features = j.value("kidnap_features", c.kidnap_features);
  c.loop_sigma_trans = j.value("loop_sigma_trans", c.loop_sigma_trans);
  c.loop_sigma_rot = j.value("loop_sigma_rot", c.loop_sigma_rot);
  c.outlier_rate = j.value("outlier_rate", c.outlier_rate);
  c.outlier_min_trans = j.value("outlier_min_trans", c.outlier_min_trans);
  c.outlier_max_trans = j.value("outlier_max_trans", c.outlier_max_trans);
  c.exclusion_window = j.value("exclusion_window", c.exclusion_window);
  c.validate();
  return c;
}

nlohmann::json SimConfig::to_json() const {
  nlohmann::json ks = nlohmann::json::array();
  for (const auto& k : kidnaps) ks.push_back({{"frame", k.frame}, {"teleport_to", k.teleport_to}, {"duration", k.duration}});
  return {{"seed", seed},
          {"descriptor_dim", descriptor_dim},
          {"place_count", place_count},
          {"place_spacing", place_spacing},
          {"frames", frames},
          {"start_place", start_place},
          {"frame_dt", frame_dt},
          {"planar", planar},
          {"odom_sigma_trans", odom_sigma_trans},
          {"odom_sigma_rot", odom_sigma_rot},
          {"descriptor_sigma", descriptor_sigma},
          {"kidnaps", ks},
          {"nominal_features", nominal_features},
          {"feature_jitter", feature_jitter},
          {"kidnap_features", kidnap_features},
          {"loop_sigma_trans", loop_sigma_trans},
          {"loop_sigma_rot", loop_sigma_rot},
          {"outlier_rate", outlier_rate},
          {"outlier_min_trans", outlier_min_trans},
          {"outlier_max_trans", outlier_max_trans},
          {"exclusion_window", exclusion_window}};
}

Pose GroundTruth::world_offset(int k, int kp) const {
  return compose(inverse(world_origins.at(k)), world_origins.at(kp));
}

std::vector<KeyframeId> GroundTruth::true_matches(KeyframeId id) const {
  if (id < 0 || std::size_t(id) >= matches_.size()) return {};
  return matches_[std::size_t(id)];
}

GroundTruth ground_truth_from_places(std::vector<Pose> poses, std::vector<int> places, std::vector<int> worlds,
                                     std::vector<Pose> world_origins, int exclusion_window) {
  GroundTruth gt;
  gt.poses = std::move(poses);
  gt.places = std::move(places);
  gt.worlds = std::move(worlds);
  gt.world_origins = std::move(world_origins);
  gt.exclusion_window = exclusion_window;
  gt.matches_.resize(gt.places.size());
  std::map<int, std::vector<KeyframeId>> seen;
  for (std::size_t i = 0; i < gt.places.size(); ++i) {
    const int place = gt.places[i];
    if (place < 0) continue;
    for (KeyframeId j : seen[place]) {
      if (KeyframeId(i) - j >= exclusion_window) {
        gt.loop_pairs.emplace_back(KeyframeId(i), j);
        gt.matches_[i].push_back(j);
      }
    }
    seen[place].push_back(KeyframeId(i));
  }
  return gt;
}

nlohmann::json GroundTruth::to_json() const {
  nlohmann::json p = nlohmann::json::array(), o = nlohmann::json::array(), lp = nlohmann::json::array();
  for (const auto& x : poses) p.push_back(pose_to_json(x));
  for (const auto& x : world_origins) o.push_back(pose_to_json(x));
  for (const auto& [a, b] : loop_pairs) lp.push_back({a, b});
  return {{"poses", p}, {"places", places}, {"worlds", worlds}, {"world_origins", o},
          {"exclusion_window", exclusion_window}, {"loop_pairs", lp}};
}

GroundTruth GroundTruth::from_json(const nlohmann::json& j) {
  std::vector<Pose> poses, origins;
  for (const auto& x : j.at("poses")) poses.push_back(pose_from_json(x));
  for (const auto& x : j.at("world_origins")) origins.push_back(pose_from_json(x));
  return ground_truth_from_places(std::move(poses), j.at("places").get<std::vector<int>>(),
                                  j.at("worlds").get<std::vector<int>>(), std::move(origins),
                                  j.at("exclusion_window").get<int>());
}

SimOutput generate(const SimConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);

  std::vector<Eigen::VectorXd> anchors;
  anchors.reserve(cfg.place_count);
  for (int p = 0; p < cfg.place_count; ++p) anchors.push_back(random_unit_vector(cfg.descriptor_dim, rng));

  std::mt19937_64 odo_rng(mix(cfg.seed ^ 0x0D0ULL));
  std::mt19937_64 desc_rng(mix(cfg.seed ^ 0xDE5ULL));
  std::mt19937_64 feat_rng(mix(cfg.seed ^ 0xFEA7ULL));
  std::uniform_int_distribution<int> jitter(-cfg.feature_jitter, cfg.feature_jitter);

  std::vector<Pose> poses;
  std::vector<int> places, worlds;
  std::vector<Pose> origins;
  SimOutput out;

  int place = ((cfg.start_place % cfg.place_count) + cfg.place_count) % cfg.place_count;
  int world = 0;
  bool world_started = false;
  Pose odom;
  Pose last_true;
  std::size_t next_kidnap = 0;
  int blind_left = 0;
  int resume_place = 0;

  for (int f = 0; f < cfg.frames; ++f) {
    if (blind_left == 0 && next_kidnap < cfg.kidnaps.size() && cfg.kidnaps[next_kidnap].frame == f) {
      blind_left = cfg.kidnaps[next_kidnap].duration;
      resume_place = cfg.kidnaps[next_kidnap].teleport_to;
      ++next_kidnap;
    }
    Keyframe kf;
    kf.id = f;
    kf.timestamp = f * cfg.frame_dt;
    if (blind_left > 0) {
      --blind_left;
      kf.world = world;
      kf.odom_pose = odom;
      kf.descriptor = random_unit_vector(cfg.descriptor_dim, desc_rng);
      kf.tracked_features = cfg.kidnap_features;
      poses.push_back(last_true);
      places.push_back(-1);
      worlds.push_back(-1);
      if (blind_left == 0) {
        place = resume_place;
        ++world;
        world_started = false;
      }
      out.stream.push_back(std::move(kf));
      continue;
    }

    const Pose truth = place_pose(cfg, place);
    if (!world_started) {
      origins.push_back(truth);
      odom = Pose::identity();
      world_started = true;
    } else {
      const Pose rel = compose(inverse(last_true), truth);
      odom = compose(odom, compose(rel, noise_pose(cfg.odom_sigma_trans, cfg.odom_sigma_rot, cfg.planar, odo_rng)));
    }
    last_true = truth;

    Eigen::VectorXd d = anchors[place];
    if (cfg.descriptor_sigma > 0) {
      d += cfg.descriptor_sigma * random_unit_vector(cfg.descriptor_dim, desc_rng);
      d.normalize();
    }
    kf.world = world;
    kf.odom_pose = odom;
    kf.descriptor = std::move(d);
    kf.tracked_features = std::max(cfg.nominal_features + jitter(feat_rng), 0);
    poses.push_back(truth);
    places.push_back(place);
    worlds.push_back(world);
    out.stream.push_back(std::move(kf));
    place = (place + 1) % cfg.place_count;
  }
  out.truth = ground_truth_from_places(std::move(poses), std::move(places), std::move(worlds), std::move(origins),
                                       cfg.exclusion_window);
  return out;
}

LoopMeasurement loop_measurement(KeyframeId i, KeyframeId j, const GroundTruth& truth, const SimConfig& cfg) {
  std::mt19937_64 rng(mix(mix(cfg.seed ^ 0x100FULL) ^ mix(std::uint64_t(i) * 1000003ULL + std::uint64_t(j))));
  LoopMeasurement m;
  const Pose rel = compose(inverse(truth.poses.at(std::size_t(i))), truth.poses.at(std::size_t(j)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (cfg.outlier_rate > 0 && u01(rng) < cfg.outlier_rate) {
    const double dist = cfg.outlier_min_trans + (cfg.outlier_max_trans - cfg.outlier_min_trans) * u01(rng);
    const double heading = 2.0 * M_PI * u01(rng);
    const double yaw = (u01(rng) - 0.5) * M_PI / 2.0;
    const Pose kick(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())), Vec3(dist * std::cos(heading), dist * std::sin(heading), 0));
    m.relative_pose = compose(rel, kick);
    m.outlier = true;
    return m;
  }
  m.relative_pose = compose(rel, noise_pose(cfg.loop_sigma_trans, cfg.loop_sigma_rot, cfg.planar, rng));
  return m;
}

ToyDatasetConfig ToyDatasetConfig::from_json(const nlohmann::json& j) {
  ToyDatasetConfig c;
  c.seed = j.value("seed", c.seed);
  c.dim = j.value("dim", c.dim);
  c.places = j.value("places", c.places);
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.signature_words = j.value("signature_words", c.signature_words);
  c.clutter_words = j.value("clutter_words", c.clutter_words);
  c.clutter_fraction = j.value("clutter_fraction", c.clutter_fraction);
  c.feature_sigma = j.value("feature_sigma", c.feature_sigma);
  c.train_tuples = j.value("train_tuples", c.train_tuples);
  c.validation_tuples = j.value("validation_tuples", c.validation_tuples);
  c.positives = j.value("positives", c.positives);
  c.negatives = j.value("negatives", c.negatives);
  return c;
}

ToyDataset generate_toy_dataset(const ToyDatasetConfig& cfg) {
  if (cfg.places < 2 || cfg.dim < 1 || cfg.signature_words < 1 || cfg.clutter_words < 1 || cfg.positives < 1 ||
      cfg.negatives < 1 || cfg.negatives >= cfg.places) {
    throw std::invalid_argument("ToyDatasetConfig: invalid sizes");
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<Eigen::VectorXd>> signatures(cfg.places);
  for (auto& s : signatures)
    for (int w = 0; w < cfg.signature_words; ++w) s.push_back(random_unit_vector(cfg.dim, rng));
  std::vector<Eigen::VectorXd> clutter;
  for (int w = 0; w < cfg.clutter_words; ++w) clutter.push_back(random_unit_vector(cfg.dim, rng));

  std::normal_distribution<double> noise(0.0, cfg.feature_sigma);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> pick_sig(0, cfg.signature_words - 1);
  std::uniform_int_distribution<int> pick_clutter(0, cfg.clutter_words - 1);
  std::uniform_int_distribution<int> pick_place(0, cfg.places - 1);

  auto view = [&](int place) {
    FeatureMap f(cfg.width, cfg.height, cfg.dim);
    for (int u = 0; u < f.pixels(); ++u) {
      const Eigen::VectorXd& word =
          u01(rng) < cfg.clutter_fraction ? clutter[pick_clutter(rng)] : signatures[place][pick_sig(rng)];
      for (int d = 0; d < cfg.dim; ++d) f.values(d, u) = word(d) + noise(rng);
    }
    return f;
  };
  auto make_tuple = [&]() {
    FeatureTuple t;
    const int q = pick_place(rng);
    t.query = view(q);
    for (int i = 0; i < cfg.positives; ++i) t.positives.push_back(view(q));
    std::vector<int> used{q};
    while (int(t.negatives.size()) < cfg.negatives) {
      const int n = pick_place(rng);
      if (std::find(used.begin(), used.end(), n) != used.end()) continue;
      used.push_back(n);
      t.negatives.push_back(view(n));
    }
    return t;
  };

  ToyDataset ds;
  ds.dim = cfg.dim;
  for (int i = 0; i < cfg.train_tuples; ++i) ds.train.push_back(make_tuple());
  for (int i = 0; i < cfg.validation_tuples; ++i) ds.validation.push_back(make_tuple());
  return ds;
}

void write_trajectory_csv(std::ostream& os, const std::vector<std::pair<KeyframeId, Pose>>& traj) {
  os << "frame,x,y,z,qw,qx,qy,qz\n";
  for (const auto& [id, p] : traj) {
    os << fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}\n", id, p.translation.x(),
                      p.translation.y(), p.translation.z(), p.rotation.w(), p.rotation.x(), p.rotation.y(),
                      p.rotation.z());
  }
}

}  // namespace loopkit
