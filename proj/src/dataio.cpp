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

#include "tpl/dataio.hpp"

#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tpl/fileio.hpp"

namespace tpl::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Embedding binary format

std::vector<std::uint8_t> encode_embedding(const EmbeddingSequence& seq) {
  io::ByteWriter w;
  w.put_bytes("TPLE");
  w.put<std::uint16_t>(kEmbeddingVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.channels()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.length()));
  w.put<std::uint8_t>(kDtypeFloat32);
  w.put<std::uint8_t>(seq.mask ? kFlagHasMask : 0);
  for (double v : seq.data.data()) w.put<float>(static_cast<float>(v));
  if (seq.mask) {
    for (double v : seq.mask->data()) w.put<std::uint8_t>(v != 0.0 ? 1 : 0);
  }
  return w.take();
}

EmbeddingSequence decode_embedding(std::span<const std::uint8_t> bytes, const std::string& id) {
  io::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "TPLE") throw io::FormatError("bad embedding magic", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kEmbeddingVersion) {
    throw io::FormatError("unsupported embedding version " + std::to_string(version), 4);
  }
  const auto channels = r.get<std::uint32_t>("channel count");
  if (channels == 0) throw io::FormatError("embedding header declares zero channels", 6);
  const auto length = r.get<std::uint32_t>("length");
  if (length < 2) throw io::FormatError("embedding header declares length < 2", 10);
  const auto dtype = r.get<std::uint8_t>("dtype");
  if (dtype != kDtypeFloat32) throw io::FormatError("unsupported dtype code " + std::to_string(dtype), 14);
  const auto flags = r.get<std::uint8_t>("flags");
  if ((flags & ~kFlagHasMask) != 0) throw io::FormatError("unknown header flags", 15);

  const std::size_t n = static_cast<std::size_t>(channels) * length;
  r.require(n * sizeof(float), "embedding values");
  EmbeddingSequence seq{id, Matrix(channels, length), std::nullopt};
  for (double& v : seq.data.data()) v = r.get<float>("embedding values");
  if (flags & kFlagHasMask) {
    r.require(n, "mask");
    Matrix m(channels, length);
    for (double& v : m.data()) v = r.get<std::uint8_t>("mask") != 0 ? 1.0 : 0.0;
    seq.mask = std::move(m);
  }
  if (r.remaining() != 0) throw io::FormatError("trailing bytes after embedding payload", r.offset());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < length; ++t) {
      if (seq.valid(c, t) && !std::isfinite(seq.data(c, t))) {
        throw io::FormatError("non-finite value at channel " + std::to_string(c) + ", frame " + std::to_string(t),
                              20 + (c * length + t) * sizeof(float));
      }
    }
  }
  return seq;
}

void save_embedding(const std::filesystem::path& path, const EmbeddingSequence& seq) {
  io::write_file_atomic(path, encode_embedding(seq));
}

EmbeddingSequence load_embedding(const std::filesystem::path& path) {
  return decode_embedding(io::read_file(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Annotations

PhaseAnnotation parse_annotation(const std::string& json_text) {
  const json j = json::parse(json_text);
  PhaseAnnotation a;
  a.video_id = j.at("video_id").get<std::string>();
  a.action = j.value("action", std::string{});
  a.length = j.at("length").get<std::size_t>();
  a.phase_labels.labels = j.at("phase_labels").get<std::vector<int>>();
  if (a.phase_labels.length() != a.length) {
    throw std::runtime_error("annotation " + a.video_id + ": phase_labels has " +
                             std::to_string(a.phase_labels.length()) + " entries, declared length " +
                             std::to_string(a.length));
  }
  for (int l : a.phase_labels.labels) {
    if (l < 0) throw std::runtime_error("annotation " + a.video_id + ": negative phase label");
  }
  if (j.contains("key_events")) {
    for (const auto& [name, frame] : j.at("key_events").items()) {
      const auto f = frame.get<std::size_t>();
      if (f >= a.length) throw std::runtime_error("annotation " + a.video_id + ": key event " + name + " out of range");
      a.key_events[name] = f;
    }
  }
  a.split = j.value("split", std::string("train"));
  if (a.split != "train" && a.split != "val") {
    throw std::runtime_error("annotation " + a.video_id + ": split must be train or val");
  }
  const auto& lab = a.phase_labels.labels;
  for (std::size_t t = 1; t < lab.size(); ++t) {
    if (lab[t] < lab[t - 1] || lab[t] > lab[t - 1] + 1) {
      a.warnings.push_back("phase labels are not contiguous non-decreasing at frame " + std::to_string(t));
      break;
    }
  }
  return a;
}

std::string annotation_to_json(const PhaseAnnotation& a) {
  json j;
  j["video_id"] = a.video_id;
  j["action"] = a.action;
  j["length"] = a.length;
  j["phase_labels"] = a.phase_labels.labels;
  j["key_events"] = json::object();
  for (const auto& [k, v] : a.key_events) j["key_events"][k] = v;
  j["split"] = a.split;
  return j.dump(2) + "\n";
}

PhaseAnnotation load_annotation(const std::filesystem::path& path) {
  return parse_annotation(io::read_text(path));
}

void save_annotation(const std::filesystem::path& path, const PhaseAnnotation& ann) {
  io::write_text_atomic(path, annotation_to_json(ann));
}

void validate_pairing(const PhaseAnnotation& ann, const EmbeddingSequence& seq) {
  if (ann.length != seq.length()) {
    throw std::runtime_error("annotation " + ann.video_id + " has length " + std::to_string(ann.length) +
                             " but its embedding has " + std::to_string(seq.length()) + " frames");
  }
}

// ---------------------------------------------------------------------------
// Manifests

DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir) {
  const json j = json::parse(json_text);
  DatasetManifest m;
  m.base_dir = base_dir;
  for (const auto& c : j.at("classes")) {
    ClassEntry ce;
    ce.name = c.at("name").get<std::string>();
    for (const auto& v : c.at("videos")) {
      ce.videos.push_back({v.at("id").get<std::string>(), v.at("embedding_path").get<std::string>(),
                           v.at("annotation_path").get<std::string>(), v.value("split", std::string("train"))});
    }
    m.classes.push_back(std::move(ce));
  }
  return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["classes"] = json::array();
  for (const auto& c : m.classes) {
    json jc;
    jc["name"] = c.name;
    jc["videos"] = json::array();
    for (const auto& v : c.videos) {
      jc["videos"].push_back(
          {{"id", v.id}, {"embedding_path", v.embedding_path}, {"annotation_path", v.annotation_path}, {"split", v.split}});
    }
    j["classes"].push_back(jc);
  }
  return j.dump(2) + "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  DatasetManifest m = parse_manifest(io::read_text(path), path.parent_path());
  std::set<std::string> ids;
  for (const auto& c : m.classes) {
    bool has_train = false;
    for (const auto& v : c.videos) {
      if (!ids.insert(v.id).second) throw std::runtime_error("manifest: duplicate video id " + v.id);
      if (v.split != "train" && v.split != "val") throw std::runtime_error("manifest: bad split for " + v.id);
      has_train |= v.split == "train";
      for (const auto& p : {v.embedding_path, v.annotation_path}) {
        if (!std::filesystem::exists(m.base_dir / p)) throw std::runtime_error("manifest: missing file " + p);
      }
    }
    if (!has_train) throw std::runtime_error("manifest: class " + c.name + " has no train video");
  }
  return m;
}

std::vector<ClassData> load_dataset(const DatasetManifest& manifest) {
  std::vector<ClassData> out;
  for (const auto& c : manifest.classes) {
    ClassData cd{c.name, {}, {}};
    for (const auto& v : c.videos) {
      Video vid{load_embedding(manifest.base_dir / v.embedding_path),
                load_annotation(manifest.base_dir / v.annotation_path)};
      vid.embedding.id = v.id;
      validate_pairing(vid.annotation, vid.embedding);
      (v.split == "train" ? cd.train : cd.val).push_back(std::move(vid));
    }
    out.push_back(std::move(cd));
  }
  return out;
}

std::vector<EmbeddingSequence> embeddings(std::span<const Video> videos) {
  std::vector<EmbeddingSequence> out;
  for (const auto& v : videos) out.push_back(v.embedding);
  return out;
}

std::vector<LabelTrack> labels(std::span<const Video> videos) {
  std::vector<LabelTrack> out;
  for (const auto& v : videos) out.push_back(v.annotation.phase_labels);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticSpec::validate() const {
  if (n_videos < 1) throw std::invalid_argument("synthetic spec: n_videos must be positive");
  if (channels < 1) throw std::invalid_argument("synthetic spec: channels must be positive");
  if (min_length < 16) throw std::invalid_argument("synthetic spec: min_length must be at least 16");
  if (max_length < min_length) throw std::invalid_argument("synthetic spec: max_length < min_length");
  if (n_phases < 2) throw std::invalid_argument("synthetic spec: n_phases must be at least 2");
  if (warp_scale < 0.0 || noise_scale < 0.0) throw std::invalid_argument("synthetic spec: negative scale");
  if (n_cells < 2) throw std::invalid_argument("synthetic spec: n_cells must be at least 2");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("synthetic spec: val_fraction in [0,1)");
}

namespace {

// Base progression and its lift, fixed for a given seed.
struct SyntheticBase {
  struct Bump {
    double center, width, amplitude;
  };
  std::vector<Bump> bumps;
  std::vector<double> gain;
  std::vector<double> offset;

  explicit SyntheticBase(const SyntheticSpec& spec) {
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> center(0.15, 0.85), width(0.04, 0.1), amp(-0.5, 0.5);
    for (int i = 0; i < 3; ++i) bumps.push_back({center(rng), width(rng), amp(rng)});
    std::normal_distribution<double> g(0.0, 1.5), o(0.0, 0.5);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      gain.push_back(g(rng));
      offset.push_back(o(rng));
    }
  }

  double progression(double s) const {
    double p = 2.0 * s - 1.0;
    for (const auto& b : bumps) p += b.amplitude * std::exp(-0.5 * (s - b.center) * (s - b.center) / (b.width * b.width));
    return p;
  }

  double lifted(std::size_t c, double s) const { return std::tanh(gain[c] * progression(s) + offset[c]); }
};

int phase_of(double s, int n_phases) {
  return std::clamp(static_cast<int>(std::floor(s * n_phases)), 0, n_phases - 1);
}

}  // namespace

Matrix synthetic_base(const SyntheticSpec& spec, std::size_t length) {
  const SyntheticBase base(spec);
  const auto grid = cpab::unit_grid(length);
  Matrix m(spec.channels, length);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t k = 0; k < length; ++k) m(c, k) = base.lifted(c, grid[k]);
  }
  return m;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const SyntheticBase base(spec);
  const cpab::Tessellation tess(spec.n_cells);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> theta_dist(0.0, 1.0);
  std::normal_distribution<double> noise_dist(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_length, spec.max_length);

  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(spec.n_videos)));
  const std::size_t n_train = std::max<std::size_t>(1, spec.n_videos - std::min(n_val, spec.n_videos));

  SyntheticDataset ds;
  for (std::size_t i = 0; i < spec.n_videos; ++i) {
    cpab::WarpParams theta(tess.dim());
    for (std::size_t j = 0; j < tess.dim(); ++j) theta[j] = spec.warp_scale * theta_dist(rng);
    const std::size_t len = len_dist(rng);
    const auto positions = cpab::warp_grid(theta, tess, len);

    std::ostringstream id;
    id << spec.class_name << "_" << std::setw(3) << std::setfill('0') << i;
    EmbeddingSequence clean{id.str(), Matrix(spec.channels, len), std::nullopt};
    for (std::size_t c = 0; c < spec.channels; ++c) {
      for (std::size_t k = 0; k < len; ++k) clean.data(c, k) = base.lifted(c, positions[k]);
    }
    EmbeddingSequence noisy = clean;
    for (double& v : noisy.data.data()) v += spec.noise_scale * noise_dist(rng);

    PhaseAnnotation ann;
    ann.video_id = id.str();
    ann.action = spec.class_name;
    ann.length = len;
    ann.split = i < n_train ? "train" : "val";
    ann.phase_labels.labels.resize(len);
    for (std::size_t k = 0; k < len; ++k) ann.phase_labels.labels[k] = phase_of(positions[k], spec.n_phases);
    ann.key_events["start"] = 0;
    ann.key_events["end"] = len - 1;
    for (std::size_t k = 1; k < len; ++k) {
      const int l = ann.phase_labels.labels[k];
      if (l != ann.phase_labels.labels[k - 1]) ann.key_events.emplace("phase_" + std::to_string(l), k);
    }

    ds.videos.push_back(std::move(noisy));
    ds.clean_videos.push_back(std::move(clean));
    ds.annotations.push_back(std::move(ann));
    ds.true_warps.push_back(std::move(theta));
  }
  return ds;
}

std::filesystem::path write_synthetic(const SyntheticDataset& ds, const SyntheticSpec& spec,
                                      const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "embeddings");
  fs::create_directories(out_dir / "annotations");
  DatasetManifest m;
  m.base_dir = out_dir;
  ClassEntry ce{spec.class_name, {}};
  json gt = json::object();
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& id = ds.videos[i].id;
    const std::string emb = "embeddings/" + id + ".tple";
    const std::string ann = "annotations/" + id + ".json";
    save_embedding(out_dir / emb, ds.videos[i]);
    save_annotation(out_dir / ann, ds.annotations[i]);
    ce.videos.push_back({id, emb, ann, ds.annotations[i].split});
    gt[id] = std::vector<double>(ds.true_warps[i].values().begin(), ds.true_warps[i].values().end());
  }
  m.classes.push_back(std::move(ce));
  io::write_text_atomic(out_dir / "ground_truth.json", gt.dump(2) + "\n");
  io::write_text_atomic(out_dir / "spec.json", synthetic_spec_to_json(spec));
  const auto manifest_path = out_dir / "manifest.json";
  io::write_text_atomic(manifest_path, manifest_to_json(m));
  return manifest_path;
}

std::map<std::string, cpab::WarpParams> load_ground_truth(const std::filesystem::path& path) {
  const json j = json::parse(io::read_text(path));
  std::map<std::string, cpab::WarpParams> out;
  for (const auto& [id, v] : j.items()) out.emplace(id, cpab::WarpParams(v.get<std::vector<double>>()));
  return out;
}

ClassData class_data(const SyntheticDataset& ds, const std::string& class_name) {
  ClassData cd{class_name, {}, {}};
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    (ds.annotations[i].split == "train" ? cd.train : cd.val).push_back({ds.videos[i], ds.annotations[i]});
  }
  return cd;
}

SyntheticSpec synthetic_spec_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  SyntheticSpec s;
  s.n_videos = j.value("n_videos", s.n_videos);
  s.channels = j.value("channels", s.channels);
  s.min_length = j.value("min_length", s.min_length);
  s.max_length = j.value("max_length", s.max_length);
  s.n_phases = j.value("n_phases", s.n_phases);
  s.warp_scale = j.value("warp_scale", s.warp_scale);
  s.noise_scale = j.value("noise_scale", s.noise_scale);
  s.seed = j.value("seed", s.seed);
  s.n_cells = j.value("n_cells", s.n_cells);
  s.class_name = j.value("class_name", s.class_name);
  s.val_fraction = j.value("val_fraction", s.val_fraction);
  s.validate();
  return s;
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
  json j{{"n_videos", s.n_videos},     {"channels", s.channels},       {"min_length", s.min_length},
         {"max_length", s.max_length}, {"n_phases", s.n_phases},       {"warp_scale", s.warp_scale},
         {"noise_scale", s.noise_scale}, {"seed", s.seed},             {"n_cells", s.n_cells},
         {"class_name", s.class_name}, {"val_fraction", s.val_fraction}};
  return j.dump(2) + "\n";
}

}  // namespace tpl::data
