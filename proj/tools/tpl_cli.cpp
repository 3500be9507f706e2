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


#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tpl/baselines.hpp"
#include "tpl/dataio.hpp"
#include "tpl/fileio.hpp"
#include "tpl/metrics.hpp"
#include "tpl/pipeline.hpp"
#include "tpl/prototype.hpp"

namespace fs = std::filesystem;
using namespace tpl;
using nlohmann::json;

namespace {

struct Options {
  std::string spec, out, manifest, config, model, method = "tpl", report, csv, split = "all", class_name;
  std::vector<std::string> ablate;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma;
  std::size_t window = 1;
  std::size_t max_videos = 5;
};

pipeline::RunConfig base_config(const Options& o) {
  pipeline::RunConfig c = pipeline::desk_run_config();
  if (!o.config.empty()) c = pipeline::run_config_from_json(io::read_text(o.config), c);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.synthetic.seed = *o.seed;
  }
  return c;
}

void apply_ablations(pipeline::RunConfig& c, const std::vector<std::string>& flags) {
  for (const auto& f : flags) {
    if (f == "no-bottleneck") {
      c.ablation.no_bottleneck = true;
    } else if (f == "no-decoder") {
      c.ablation.no_decoder = true;
    } else if (f == "no-median") {
      c.ablation.no_median = true;
    } else {
      throw std::invalid_argument("unknown ablation '" + f + "' (no-bottleneck, no-decoder, no-median)");
    }
  }
  c.validate();
}

std::vector<data::ClassData> dataset(const Options& o) { return data::load_dataset(data::load_manifest(o.manifest)); }

const data::ClassData& find_class(const std::vector<data::ClassData>& classes, const std::string& name) {
  if (name.empty()) return classes.front();
  for (const auto& c : classes) {
    if (c.name == name) return c;
  }
  throw std::invalid_argument("class not in manifest: " + name);
}

const dmtae::DmtaeModel& model_for(const std::map<std::string, dmtae::DmtaeModel>& models, const std::string& cls) {
  const auto it = models.find(cls);
  if (it == models.end()) throw std::invalid_argument("checkpoint has no model for class " + cls);
  return it->second;
}

std::vector<data::Video> videos_of(const data::ClassData& c, const std::string& split) {
  if (split == "train") return c.train;
  if (split == "val") return c.val;
  auto all = c.train;
  all.insert(all.end(), c.val.begin(), c.val.end());
  return all;
}

// ---------------------------------------------------------------------------

int synth_gen(const Options& o) {
  data::SyntheticSpec spec;
  if (!o.spec.empty()) {
    const json j = json::parse(io::read_text(o.spec));
    spec = data::synthetic_spec_from_json(j.contains("synthetic") ? j.at("synthetic").dump() : j.dump());
  }
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  const auto manifest = data::write_synthetic(data::generate_synthetic(spec), spec, o.out);
  std::cout << manifest.string() << '\n';
  return 0;
}

int train(const Options& o) {
  auto config = base_config(o);
  config.method = pipeline::parse_method(o.method);
  apply_ablations(config, o.ablate);
  if (!pipeline::is_learned(config.method)) {
    throw std::invalid_argument("train supports tpl and tpl-vae; use the baseline command for " + o.method);
  }
  std::vector<pipeline::TrainedClass> trained;
  for (const auto& cls : dataset(o)) {
    trained.push_back(pipeline::train_class(cls, config, [&](const dmtae::EpochRecord& r) {
      std::cerr << cls.name << " epoch " << r.epoch << " total " << r.losses.total << " icae " << r.losses.icae << '\n';
    }));
  }
  pipeline::save_checkpoint(o.out, config, trained);
  std::cout << o.out << '\n';
  return 0;
}

int eval(const Options& o) {
  const auto method = pipeline::parse_method(o.method);
  pipeline::RunConfig config = base_config(o);
  std::map<std::string, dmtae::DmtaeModel> models;
  if (pipeline::is_learned(method)) {
    if (o.model.empty()) throw std::invalid_argument("method " + o.method + " needs --model");
    if (auto saved = pipeline::load_run_config(o.model)) {
      const auto classifier = config.classifier;
      config = *saved;
      config.classifier = classifier;
    }
    models = pipeline::load_models(o.model);
  } else {
    config.ablation = {};
  }
  config.method = method;
  const auto report = pipeline::evaluate(dataset(o), config, models);
  io::write_text_atomic(o.report, report.to_json());
  if (!o.csv.empty()) {
    io::write_text_atomic(o.csv, metrics::MetricReport::csv_header() + report.csv_rows(o.method, o.seed.value_or(config.train.seed)));
  }
  std::cout << report.to_json();
  return 0;
}

int sync(const Options& o) {
  const auto models = pipeline::load_models(o.model);
  fs::create_directories(o.out);
  for (const auto& cls : dataset(o)) {
    const auto seqs = pipeline::embeddings_of(videos_of(cls, o.split));
    if (seqs.empty()) continue;
    const auto map = proto::synchronize(seqs, model_for(models, cls.name));
    const auto path = fs::path(o.out) / (cls.name + ".sync.csv");
    io::write_text_atomic(path, map.to_csv());
    std::cout << path.string() << '\n';
  }
  return 0;
}

int retrieve(const Options& o) {
  const auto models = pipeline::load_models(o.model);
  json out = json::object();
  for (const auto& cls : dataset(o)) {
    if (cls.val.empty()) continue;
    out[cls.name] = json::parse(pipeline::retrieval_benchmark(cls, model_for(models, cls.name), o.window).to_json());
  }
  if (out.empty()) throw std::invalid_argument("no class has val videos to retrieve for");
  const std::string text = out.dump(2) + "\n";
  if (!o.report.empty()) io::write_text_atomic(o.report, text);
  std::cout << text;
  return 0;
}

int baseline(const Options& o) {
  const auto method = pipeline::parse_method(o.method);
  if (pipeline::is_learned(method)) throw std::invalid_argument("baseline methods: dba, softdba, euclidean");
  if (method == pipeline::Method::softdba && !o.gamma) throw std::invalid_argument("softdba requires --gamma");
  if (method != pipeline::Method::softdba && o.gamma) throw std::invalid_argument("--gamma applies to softdba only");
  auto config = base_config(o);
  config.method = method;
  config.ablation = {};
  if (o.gamma) config.softdba.gamma = *o.gamma;
  config.validate();
  fs::create_directories(o.out);
  for (const auto& cls : dataset(o)) {
    const auto seqs = pipeline::embeddings_of(cls.train);
    std::vector<Matrix> mats;
    for (const auto& s : seqs) mats.push_back(s.data);
    proto::Prototype p;
    std::vector<FrameAlignment> align;
    if (method == pipeline::Method::euclidean) {
      auto e = baselines::euclidean_baseline(seqs);
      p.embedding = e.prototype;
      align = std::move(e.alignments);
    } else {
      p.embedding = (method == pipeline::Method::dba ? baselines::dba(mats, config.dba)
                                                     : baselines::soft_dba(mats, config.softdba))
                        .sequence;
      for (const auto& m : mats) align.push_back(baselines::dtw_alignment(m, p.embedding));
    }
    // Baselines average in embedding space, so the latent is the embedding.
    p.latent = p.embedding;
    p.labels.labels = metrics::prototype_labels(pipeline::labels_of(cls.train), align);
    p.class_name = cls.name;
    p.n_sources = seqs.size();
    const auto stem = fs::path(o.out) / (cls.name + "." + o.method + ".prototype");
    proto::save_prototype(p, stem);
    std::cout << stem.string() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Plot

struct Series {
  std::string id;
  std::vector<double> values;
};

std::string polyline_panel(const std::vector<Series>& series, double x0, const std::string& title, double lo,
                           double hi) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double w = 400, h = 250, top = 30;
  std::ostringstream os;
  os.precision(6);
  os << "<g>\n<text x=\"" << x0 + w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& v = series[k].values;
    os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colors[k % 10] << "\" points=\"";
    for (std::size_t t = 0; t < v.size(); ++t) {
      const double x = x0 + (v.size() > 1 ? w * static_cast<double>(t) / static_cast<double>(v.size() - 1) : 0.0);
      const double y = top + h - h * (v[t] - lo) / span;
      os << (t ? " " : "") << x << ',' << y;
    }
    os << "\"><title>" << series[k].id << "</title></polyline>\n";
  }
  os << "</g>\n";
  return os.str();
}

int plot(const Options& o) {
  const auto models = pipeline::load_models(o.model);
  const auto classes = dataset(o);
  const auto& cls = find_class(classes, o.class_name);
  const auto& model = model_for(models, cls.name);
  auto seqs = pipeline::embeddings_of(videos_of(cls, o.split));
  if (seqs.empty()) throw std::invalid_argument("no videos in the selected split");
  if (seqs.size() > o.max_videos) seqs.resize(o.max_videos);
  const auto aligned = dmtae::infer_alignment(model, seqs);

  std::vector<Series> before, after;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto row = aligned.latents[i].row(0);
    before.push_back({seqs[i].id, {row.begin(), row.end()}});
    const auto warped = aligned.warped[i].row(0);
    after.push_back({seqs[i].id, {warped.begin(), warped.end()}});
  }
  double lo = INFINITY, hi = -INFINITY;
  for (const auto* set : {&before, &after}) {
    for (const auto& s : *set) {
      for (double v : s.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" height=\"300\" viewBox=\"0 0 860 300\">\n"
      << polyline_panel(before, 20, "unaligned latent", lo, hi) << polyline_panel(after, 440, "aligned latent", lo, hi)
      << "</svg>\n";
  std::ostringstream csv;
  csv.precision(17);
  csv << "video_id,panel,t,value\n";
  for (const auto& [panel, set] : {std::pair{"unaligned", &before}, std::pair{"aligned", &after}}) {
    for (const auto& s : *set) {
      for (std::size_t t = 0; t < s.values.size(); ++t) csv << s.id << ',' << panel << ',' << t << ',' << s.values[t] << '\n';
    }
  }
  fs::create_directories(o.out);
  const auto stem = fs::path(o.out) / (cls.name + ".latent");
  io::write_text_atomic(fs::path(stem.string() + ".svg"), svg.str());
  io::write_text_atomic(fs::path(stem.string() + ".csv"), csv.str());
  std::cout << stem.string() << ".svg\n" << stem.string() << ".csv\n";
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal prototype learning: train, align, evaluate and benchmark video embeddings"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> splits{"train", "val", "all"};

  auto* gen = app.add_subcommand("synth-gen", "Write a synthetic dataset with ground-truth warps");
  gen->add_option("--spec", o.spec, "Synthetic spec JSON (or a run config with a 'synthetic' section)")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--seed", o.seed, "Overrides the spec seed");

  auto* tr = app.add_subcommand("train", "Train one alignment model per class");
  tr->add_option("--manifest", o.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", o.config, "Run config JSON")->check(CLI::ExistingFile);
  tr->add_option("--out", o.out, "Checkpoint directory")->required();
  tr->add_option("--method", o.method, "tpl or tpl-vae");
  tr->add_option("--ablate", o.ablate, "no-bottleneck, no-decoder or no-median (repeatable)");
  tr->add_option("--seed", o.seed, "Overrides the training seed");

  auto* ev = app.add_subcommand("eval", "Compute the metric report on the val split");
  ev->add_option("--manifest", o.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--model", o.model, "Checkpoint directory (learned methods)");
  ev->add_option("--method", o.method, "tpl, tpl-vae, dba, softdba or euclidean")->required();
  ev->add_option("--config", o.config, "Run config JSON (baseline and classifier settings)")->check(CLI::ExistingFile);
  ev->add_option("--report", o.report, "Report JSON path")->required();
  ev->add_option("--csv", o.csv, "Also write CSV rows per class");
  ev->add_option("--seed", o.seed, "Seed recorded in the CSV rows");

  auto* sy = app.add_subcommand("sync", "Write the frame-to-prototype map of every video");
  sy->add_option("--manifest", o.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  sy->add_option("--model", o.model, "Checkpoint directory")->required();
  sy->add_option("--out", o.out, "Output directory, one CSV per class")->required();
  sy->add_option("--split", o.split, "train, val or all")->check(CLI::IsMember(splits));

  auto* rt = app.add_subcommand("retrieve", "Compare full and synchronized nearest-frame retrieval");
  rt->add_option("--manifest", o.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  rt->add_option("--model", o.model, "Checkpoint directory")->required();
  rt->add_option("--window", o.window, "Prototype-frame window of the synced search");
  rt->add_option("--report", o.report, "Report JSON path");

  auto* bl = app.add_subcommand("baseline", "Compute DBA, soft-DBA or Euclidean prototypes");
  bl->add_option("--manifest", o.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  bl->add_option("--method", o.method, "dba, softdba or euclidean")->required();
  bl->add_option("--gamma", o.gamma, "Soft-DTW smoothing (softdba only, required there)");
  bl->add_option("--config", o.config, "Run config JSON")->check(CLI::ExistingFile);
  bl->add_option("--out", o.out, "Output directory")->required();

  auto* pl = app.add_subcommand("plot", "Plot latent trajectories before and after alignment");
  pl->add_option("--manifest", o.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  pl->add_option("--model", o.model, "Checkpoint directory")->required();
  pl->add_option("--out", o.out, "Output directory")->required();
  pl->add_option("--class", o.class_name, "Class to plot (default: first)");
  pl->add_option("--split", o.split, "train, val or all")->check(CLI::IsMember(splits));
  pl->add_option("--max-videos", o.max_videos, "Number of videos drawn")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "tpl: error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) return synth_gen(o);
    if (tr->parsed()) return train(o);
    if (ev->parsed()) return eval(o);
    if (sy->parsed()) return sync(o);
    if (rt->parsed()) return retrieve(o);
    if (bl->parsed()) return baseline(o);
    if (pl->parsed()) return plot(o);
  } catch (const std::exception& e) {
    std::cerr << "tpl: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
