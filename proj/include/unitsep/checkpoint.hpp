// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fstream>
#include <json.hpp>
#include <string>

#include "unitsep/nn/layers.hpp"

namespace unitsep {

// Self-describing checkpoint container shared by every trainable model:
// a text magic line, a JSON metadata block, then raw little-endian doubles
// for each parameter (value and Adam moments, in registration order).
struct CheckpointMeta {
  std::string kind;          // "separator" | "vocoder" | "refiner"
  nlohmann::json config;     // architecture configuration
  std::string codebook_id;   // extractor/codebook fingerprint
  std::int64_t step = 0;     // optimizer steps taken
  int adam_t = 0;
  std::string rng_state;     // serialized training RNG, for exact resume
  nlohmann::json extra;      // trainer-specific bookkeeping
};

namespace detail {

inline void write_mat(std::ofstream& f, const nn::Mat& m) {
  f.write(reinterpret_cast<const char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline void read_mat(std::ifstream& f, nn::Mat& m) {
  f.read(reinterpret_cast<char*>(m.data()),
         static_cast<std::streamsize>(m.size() * sizeof(double)));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                            const nn::ParamStore& store) {
  nlohmann::json j;
  j["kind"] = meta.kind;
  j["config"] = meta.config;
  j["codebook_id"] = meta.codebook_id;
  j["step"] = meta.step;
  j["adam_t"] = meta.adam_t;
  j["rng_state"] = meta.rng_state;
  j["extra"] = meta.extra;
  auto arrays = nlohmann::json::array();
  for (const nn::Param* p : store.all()) {
    arrays.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()}});
  }
  j["arrays"] = arrays;
  const std::string blob = j.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open '" + path + "'");
  f << "USCKPT1\n" << blob.size() << "\n" << blob;
  for (const nn::Param* p : store.all()) {
    detail::write_mat(f, p->value);
    nn::Mat m = p->adam_m.size() ? p->adam_m
                                 : nn::Mat::Zero(p->value.rows(), p->value.cols());
    nn::Mat v = p->adam_v.size() ? p->adam_v
                                 : nn::Mat::Zero(p->value.rows(), p->value.cols());
    detail::write_mat(f, m);
    detail::write_mat(f, v);
  }
  if (!f) throw IoError("save_checkpoint: write failure on '" + path + "'");
}

// Reads only the metadata block (to reconstruct the model before loading).
inline CheckpointMeta load_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::string magic;
  std::getline(f, magic);
  if (magic != "USCKPT1") throw FormatError("load_checkpoint: bad magic in '" + path + "'");
  std::size_t len = 0;
  f >> len;
  f.ignore(1);
  std::string blob(len, '\0');
  f.read(blob.data(), static_cast<std::streamsize>(len));
  if (!f) throw FormatError("load_checkpoint: truncated metadata in '" + path + "'");
  const auto j = nlohmann::json::parse(blob);
  CheckpointMeta meta;
  meta.kind = j.at("kind").get<std::string>();
  meta.config = j.at("config");
  meta.codebook_id = j.at("codebook_id").get<std::string>();
  meta.step = j.at("step").get<std::int64_t>();
  meta.adam_t = j.at("adam_t").get<int>();
  meta.rng_state = j.at("rng_state").get<std::string>();
  meta.extra = j.value("extra", nlohmann::json::object());
  return meta;
}

// Loads parameter values and optimizer moments into an already-built store.
// The array manifest in the metadata must match the store layout exactly.
inline CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::string magic;
  std::getline(f, magic);
  if (magic != "USCKPT1") throw FormatError("load_checkpoint: bad magic in '" + path + "'");
  std::size_t len = 0;
  f >> len;
  f.ignore(1);
  std::string blob(len, '\0');
  f.read(blob.data(), static_cast<std::streamsize>(len));
  if (!f) throw FormatError("load_checkpoint: truncated metadata in '" + path + "'");
  const auto j = nlohmann::json::parse(blob);

  CheckpointMeta meta;
  meta.kind = j.at("kind").get<std::string>();
  meta.config = j.at("config");
  meta.codebook_id = j.at("codebook_id").get<std::string>();
  meta.step = j.at("step").get<std::int64_t>();
  meta.adam_t = j.at("adam_t").get<int>();
  meta.rng_state = j.at("rng_state").get<std::string>();
  meta.extra = j.value("extra", nlohmann::json::object());

  auto params = store.all();
  const auto& arr = j.at("arrays");
  if (arr.size() != params.size()) {
    throw FormatError("load_checkpoint: parameter count mismatch in '" + path + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (arr[i].at("name").get<std::string>() != params[i]->name ||
        arr[i].at("rows").get<Eigen::Index>() != params[i]->value.rows() ||
        arr[i].at("cols").get<Eigen::Index>() != params[i]->value.cols()) {
      throw FormatError("load_checkpoint: parameter layout mismatch at '" +
                        params[i]->name + "' in '" + path + "'");
    }
  }

  for (nn::Param* p : params) {
    detail::read_mat(f, p->value);
    p->adam_m.resize(p->value.rows(), p->value.cols());
    p->adam_v.resize(p->value.rows(), p->value.cols());
    detail::read_mat(f, p->adam_m);
    detail::read_mat(f, p->adam_v);
  }
  if (!f) throw FormatError("load_checkpoint: truncated arrays in '" + path + "'");
  return meta;
}

}  // namespace unitsep
