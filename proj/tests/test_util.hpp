// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The UniCR Authors

#pragma once

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "unicr/rng.hpp"
#include "unicr/types.hpp"

namespace testutil {

inline unicr::SampleRecord sample(const std::string& key) {
  unicr::SampleRecord s;
  s.answer_key = key;
  return s;
}

inline std::vector<unicr::SampleRecord> samples_from_keys(
    const std::vector<std::string>& keys) {
  std::vector<unicr::SampleRecord> out;
  for (const auto& k : keys) out.push_back(sample(k));
  return out;
}

/// Samples with a full symmetric similarity matrix (and optional entailment).
inline std::vector<unicr::SampleRecord> samples_with_similarity(
    const std::vector<std::vector<double>>& sim,
    const std::vector<std::vector<double>>* entailment = nullptr) {
  std::vector<unicr::SampleRecord> out(sim.size());
  for (std::size_t i = 0; i < sim.size(); ++i) {
    out[i].answer_key = "k" + std::to_string(i);
    out[i].embedding_sim = sim[i];
    if (entailment != nullptr) out[i].entailment_pairs = (*entailment)[i];
  }
  return out;
}

inline unicr::ClaimScore claim(double max_entail, double contradiction,
                               bool salient = true, bool contradicted = false,
                               double entailment = -1.0) {
  unicr::ClaimScore c;
  c.entailment = entailment < 0.0 ? max_entail : entailment;
  c.contradicted = contradicted;
  c.salient = salient;
  c.max_passage_entailment = max_entail;
  c.contradiction_score = contradiction;
  return c;
}

/// Scratch directory under the system temp root, cleaned on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("unicr_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

}  // namespace testutil
