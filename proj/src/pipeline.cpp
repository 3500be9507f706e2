// Copyright 2026 The TPL Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "tpl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "tpl/fileio.hpp"
#include "tpl/parallel.hpp"

namespace tpl::pipeline {

using json = nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<Matrix> matrices_of(const std::vector<EmbeddingSequence>& seqs) {
  std::vector<Matrix> m;
  for (const auto& s : seqs) m.push_back(s.data);
  return m;
}

void check_class_name(const std::string& name) {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos || name == "." || name == ".." ||
      name == "run") {
    throw std::invalid_argument("class name not usable as a file name: '" + name + "'");
  }
}

// Copies keys present in j over the fields of a struct, rejecting unknown ones.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + section_ + "' must be an object");
  }
  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config: bad value for " + section_ + "." + key);
    }
  }
  template <typename T>
  void get(const char* key, std::optional<T>& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      field.reset();
      return;
    }
    T v{};
    get(key, v);
    field = v;
  }
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw std::invalid_argument("config: unknown key " + section_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

Method parse_method(std::string_view name) {
  if (name == "tpl") return Method::tpl;
  if (name == "tpl-vae") return Method::tpl_vae;
  if (name == "dba") return Method::dba;
  if (name == "softdba") return Method::softdba;
  if (name == "euclidean") return Method::euclidean;
  throw std::invalid_argument("unknown method '" + std::string(name) + "' (tpl, tpl-vae, dba, softdba, euclidean)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::tpl: return "tpl";
    case Method::tpl_vae: return "tpl-vae";
    case Method::dba: return "dba";
    case Method::softdba: return "softdba";
    case Method::euclidean: return "euclidean";
  }
  return "";
}

bool is_learned(Method m) { return m == Method::tpl || m == Method::tpl_vae; }

void RunConfig::validate() const {
  if (ablation.any() && method != Method::tpl) {
    throw std::invalid_argument("ablation flags apply to method tpl only");
  }
  if (ablation.no_bottleneck && ablation.no_decoder) {
    throw std::invalid_argument("no-bottleneck already has no decoder; do not combine it with no-decoder");
  }
  train.validate();
  synthetic.validate();
  if (!(softdba.gamma > 0.0)) throw std::invalid_argument("softdba gamma must be positive");
  if (classifier.steps == 0) throw std::invalid_argument("classifier steps must be positive");
}

dmtae::TrainConfig desk_train_config() {
  dmtae::TrainConfig c;
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.weight_decay = 1e-4;
  c.epochs = 100;
  c.alpha = 2.0;
  return c;
}

RunConfig desk_run_config() {
  RunConfig c;
  c.train = desk_train_config();
  return c;
}

RunConfig run_config_from_json(const std::string& json_text, const RunConfig& base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c = base;
  Reader top(j, "config");
  std::string method = method_name(c.method);
  top.get("method", method);
  c.method = parse_method(method);
  json section;
  auto sub = [&](const char* key) -> const json* {
    top.get(key, section);
    return j.contains(key) ? &j.at(key) : nullptr;
  };
  if (const json* a = sub("ablation")) {
    Reader r(*a, "ablation");
    r.get("no_bottleneck", c.ablation.no_bottleneck);
    r.get("no_decoder", c.ablation.no_decoder);
    r.get("no_median", c.ablation.no_median);
    r.finish();
  }
  if (const json* m = sub("model")) {
    Reader r(*m, "model");
    r.get("hidden", c.model.hidden);
    r.get("kernel", c.model.kernel);
    r.get("loc_length", c.model.loc_length);
    r.get("loc_hidden", c.model.loc_hidden);
    r.get("loc_bins", c.model.loc_bins);
    r.finish();
  }
  if (const json* t = sub("train")) {
    Reader r(*t, "train");
    r.get("batch_size", c.train.batch_size);
    r.get("learning_rate", c.train.learning_rate);
    r.get("weight_decay", c.train.weight_decay);
    r.get("epochs", c.train.epochs);
    r.get("alpha", c.train.alpha);
    r.get("t0", c.train.t0);
    r.get("seed", c.train.seed);
    r.get("beta", c.train.beta);
    r.get("gamma_smooth", c.train.gamma_smooth);
    r.get("alpha_traj", c.train.alpha_traj);
    r.get("subsample", c.train.subsample);
    r.get("rec_theta_gradient", c.train.rec_theta_gradient);
    r.finish();
  }
  if (const json* s = sub("synthetic")) {
    Reader r(*s, "synthetic");
    auto& p = c.synthetic;
    r.get("n_videos", p.n_videos);
    r.get("channels", p.channels);
    r.get("min_length", p.min_length);
    r.get("max_length", p.max_length);
    r.get("n_phases", p.n_phases);
    r.get("warp_scale", p.warp_scale);
    r.get("noise_scale", p.noise_scale);
    r.get("seed", p.seed);
    r.get("n_cells", p.n_cells);
    r.get("class_name", p.class_name);
    r.get("val_fraction", p.val_fraction);
    r.finish();
  }
  if (const json* b = sub("baseline")) {
    Reader r(*b, "baseline");
    r.get("dba_max_iter", c.dba.max_iter);
    r.get("dba_tol", c.dba.tol);
    r.get("softdba_gamma", c.softdba.gamma);
    r.get("softdba_steps", c.softdba.steps);
    r.get("softdba_learning_rate", c.softdba.learning_rate);
    r.finish();
  }
  if (const json* k = sub("classifier")) {
    Reader r(*k, "classifier");
    r.get("steps", c.classifier.steps);
    r.get("learning_rate", c.classifier.learning_rate);
    r.get("weight_decay", c.classifier.weight_decay);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& s = c.synthetic;
  json j{{"method", method_name(c.method)},
         {"ablation",
          {{"no_bottleneck", c.ablation.no_bottleneck},
           {"no_decoder", c.ablation.no_decoder},
           {"no_median", c.ablation.no_median}}},
         {"model",
          {{"hidden", c.model.hidden},
           {"kernel", c.model.kernel},
           {"loc_length", c.model.loc_length},
           {"loc_hidden", c.model.loc_hidden},
           {"loc_bins", c.model.loc_bins}}},
         {"train",
          {{"batch_size", t.batch_size},
           {"learning_rate", t.learning_rate},
           {"weight_decay", t.weight_decay},
           {"epochs", t.epochs},
           {"alpha", t.alpha},
           {"t0", t.t0 ? json(*t.t0) : json()},
           {"seed", t.seed},
           {"beta", t.beta},
           {"gamma_smooth", t.gamma_smooth},
           {"alpha_traj", t.alpha_traj},
           {"subsample", t.subsample},
           {"rec_theta_gradient", t.rec_theta_gradient}}},
         {"synthetic",
          {{"n_videos", s.n_videos},
           {"channels", s.channels},
           {"min_length", s.min_length},
           {"max_length", s.max_length},
           {"n_phases", s.n_phases},
           {"warp_scale", s.warp_scale},
           {"noise_scale", s.noise_scale},
           {"seed", s.seed},
           {"n_cells", s.n_cells},
           {"class_name", s.class_name},
           {"val_fraction", s.val_fraction}}},
         {"baseline",
          {{"dba_max_iter", c.dba.max_iter},
           {"dba_tol", c.dba.tol},
           {"softdba_gamma", c.softdba.gamma},
           {"softdba_steps", c.softdba.steps},
           {"softdba_learning_rate", c.softdba.learning_rate}}},
         {"classifier",
          {{"steps", c.classifier.steps},
           {"learning_rate", c.classifier.learning_rate},
           {"weight_decay", c.classifier.weight_decay}}}};
  return j.dump(2) + "\n";
}

dmtae::ModelConfig model_config(const RunConfig& config, std::size_t channels) {
  dmtae::ModelConfig m;
  m.channels = channels;
  m.hidden = config.model.hidden;
  m.kernel = config.model.kernel;
  m.loc_length = config.model.loc_length;
  m.loc_hidden = config.model.loc_hidden;
  m.loc_bins = config.model.loc_bins;
  m.variant = config.method == Method::tpl_vae ? dmtae::Variant::vae : dmtae::Variant::standard;
  m.ablation = config.ablation;
  return m;
}

std::vector<EmbeddingSequence> embeddings_of(const std::vector<data::Video>& videos) {
  return data::embeddings(videos);
}

std::vector<LabelTrack> labels_of(const std::vector<data::Video>& videos) { return data::labels(videos); }

TrainedClass train_class(const data::ClassData& cls, const RunConfig& config, const dmtae::EpochCallback& on_epoch) {
  if (!is_learned(config.method)) throw std::invalid_argument(method_name(config.method) + " has no training step");
  if (cls.train.empty()) throw std::invalid_argument("class " + cls.name + " has no train videos");
  const auto seqs = embeddings_of(cls.train);
  TrainedClass out{cls.name, dmtae::DmtaeModel(model_config(config, seqs[0].channels()), config.train.seed), {}, {}};
  out.history = dmtae::train(out.model, seqs, config.train, on_epoch);
  out.prototype =
      proto::build_prototype(seqs, labels_of(cls.train), dmtae::infer_alignment(out.model, seqs), cls.name);
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const RunConfig& config,
                     const std::vector<TrainedClass>& classes) {
  std::filesystem::create_directories(dir);
  json index = json::array();
  for (const auto& c : classes) {
    check_class_name(c.name);
    dmtae::save_model(c.model, dir / c.name);
    io::write_text_atomic(dir / (c.name + ".history.csv"), dmtae::history_to_csv(c.history));
    proto::save_prototype(c.prototype, dir / (c.name + ".prototype"));
    index.push_back(c.name);
  }
  json run = json::parse(run_config_to_json(config));
  run["classes"] = index;
  io::write_text_atomic(dir / "run.json", run.dump(2) + "\n");
}

std::map<std::string, dmtae::DmtaeModel> load_models(const std::filesystem::path& dir) {
  const auto run_path = dir / "run.json";
  if (!std::filesystem::exists(run_path)) throw std::runtime_error("not a checkpoint directory: " + dir.string());
  const json run = json::parse(io::read_text(run_path));
  std::map<std::string, dmtae::DmtaeModel> out;
  for (const auto& name : run.at("classes")) {
    const auto n = name.get<std::string>();
    check_class_name(n);
    out.emplace(n, dmtae::load_model(dir / n));
  }
  return out;
}

std::optional<RunConfig> load_run_config(const std::filesystem::path& dir) {
  const auto run_path = dir / "run.json";
  if (!std::filesystem::exists(run_path)) return std::nullopt;
  json run = json::parse(io::read_text(run_path));
  run.erase("classes");
  return run_config_from_json(run.dump());
}

ClassAlignment align_class(const data::ClassData& cls, const RunConfig& config, const dmtae::DmtaeModel* model) {
  if (cls.train.empty()) throw std::invalid_argument("class " + cls.name + " has no train videos");
  const auto train = embeddings_of(cls.train);
  const auto val = embeddings_of(cls.val);
  ClassAlignment a;
  switch (config.method) {
    case Method::tpl:
    case Method::tpl_vae: {
      if (!model) throw std::invalid_argument("method " + method_name(config.method) + " needs a trained model");
      a.prototype_length = model->prototype_length();
      const auto add = [&](const std::vector<EmbeddingSequence>& seqs, std::vector<FrameAlignment>& out) {
        const auto thetas = dmtae::predict_thetas(*model, seqs);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
          out.push_back(frame_alignment(thetas[i], seqs[i].length(), a.prototype_length));
        }
      };
      add(train, a.train);
      if (!val.empty()) add(val, a.val);
      break;
    }
    case Method::euclidean: {
      auto base = baselines::euclidean_baseline(train);
      a.prototype_length = base.prototype.cols();
      a.train = std::move(base.alignments);
      for (const auto& v : val) a.val.push_back(baselines::identity_alignment(v.length(), a.prototype_length));
      break;
    }
    case Method::dba:
    case Method::softdba: {
      const auto mats = matrices_of(train);
      const auto bary = config.method == Method::dba ? baselines::dba(mats, config.dba)
                                                     : baselines::soft_dba(mats, config.softdba);
      a.prototype_length = bary.sequence.cols();
      for (const auto& s : train) a.train.push_back(baselines::dtw_alignment(s.data, bary.sequence));
      for (const auto& s : val) a.val.push_back(baselines::dtw_alignment(s.data, bary.sequence));
      break;
    }
  }
  return a;
}

metrics::ClassMetrics class_metrics(const data::ClassData& cls, const ClassAlignment& alignment,
                                    const metrics::ClassifierConfig& classifier) {
  const auto train_labels = labels_of(cls.train);
  metrics::ClassMetrics m;
  m.cbc = metrics::cbc(train_labels, alignment.train);
  for (const auto& v : cls.train) m.frames += v.embedding.length();
  for (const auto& v : cls.val) m.frames += v.embedding.length();
  if (cls.val.empty()) return m;

  const auto val_labels = labels_of(cls.val);
  m.plp = metrics::plp(metrics::prototype_labels(train_labels, alignment.train), val_labels, alignment.val);

  std::vector<EmbeddingSequence> train_aligned, val_aligned;
  std::vector<LabelTrack> train_aligned_labels, val_aligned_labels;
  std::set<int> classes;
  for (std::size_t i = 0; i < cls.train.size(); ++i) {
    auto [s, l] = metrics::aligned_frames(cls.train[i].embedding, train_labels[i], alignment.train[i]);
    classes.insert(l.labels.begin(), l.labels.end());
    train_aligned.push_back(std::move(s));
    train_aligned_labels.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < cls.val.size(); ++i) {
    auto [s, l] = metrics::aligned_frames(cls.val[i].embedding, val_labels[i], alignment.val[i]);
    val_aligned.push_back(std::move(s));
    val_aligned_labels.push_back(std::move(l));
  }
  if (classes.size() >= 2) {
    m.phase_accuracy =
        metrics::phase_classification(train_aligned, train_aligned_labels, val_aligned, val_aligned_labels, classifier);
  }
  if (val_aligned.size() >= 2) m.kendall_tau = metrics::kendall_tau(val_aligned);
  return m;
}

metrics::MetricReport evaluate(const std::vector<data::ClassData>& classes, const RunConfig& config,
                               const std::map<std::string, dmtae::DmtaeModel>& models) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<metrics::ClassMetrics> results(classes.size());
  parallel_for(classes.size(), [&](std::size_t i) {
    const auto& cls = classes[i];
    const dmtae::DmtaeModel* model = nullptr;
    if (is_learned(config.method)) {
      const auto it = models.find(cls.name);
      if (it == models.end()) throw std::invalid_argument("missing model for class " + cls.name);
      model = &it->second;
    }
    results[i] = class_metrics(cls, align_class(cls, config, model), config.classifier);
  });
  std::map<std::string, metrics::ClassMetrics> per_class;
  for (std::size_t i = 0; i < classes.size(); ++i) per_class[classes[i].name] = results[i];
  return metrics::aggregate(std::move(per_class), seconds_since(start));
}

std::string RetrievalReport::to_json() const {
  json j{{"window", window},
         {"full", {{"accuracy", full_accuracy}, {"comparisons", full_comparisons}, {"seconds", full_seconds}}},
         {"synced", {{"accuracy", synced_accuracy}, {"comparisons", synced_comparisons}, {"seconds", synced_seconds}}}};
  return j.dump(2) + "\n";
}

RetrievalReport retrieval_benchmark(const data::ClassData& cls, const dmtae::DmtaeModel& model, std::size_t window) {
  if (cls.val.empty()) throw std::invalid_argument("class " + cls.name + " has no val videos to retrieve for");
  const auto train = embeddings_of(cls.train);
  const auto val = embeddings_of(cls.val);
  const auto val_labels = labels_of(cls.val);
  const proto::FrameBank bank(train, labels_of(cls.train));
  const auto sync = proto::synchronize(train, model);

  RetrievalReport r;
  r.window = window;
  std::size_t full_correct = 0, synced_correct = 0, frames = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto full = proto::retrieve_full_knn(val[i], bank);
    const auto synced = proto::retrieve_synced(val[i], model, sync, bank, window);
    for (std::size_t t = 0; t < val[i].length(); ++t) {
      full_correct += full.labels.labels[t] == val_labels[i].labels[t];
      synced_correct += synced.labels.labels[t] == val_labels[i].labels[t];
    }
    frames += val[i].length();
    r.full_comparisons += full.comparisons;
    r.synced_comparisons += synced.comparisons;
    r.full_seconds += full.seconds;
    r.synced_seconds += synced.seconds;
  }
  r.full_accuracy = static_cast<double>(full_correct) / static_cast<double>(frames);
  r.synced_accuracy = static_cast<double>(synced_correct) / static_cast<double>(frames);
  return r;
}

}  // namespace tpl::pipeline
