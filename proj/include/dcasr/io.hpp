#pragma once

// Feature files, JSONL manifests and transcript files.
//
// Feature file: "DFEA" | u32 T | u32 D | u32 reserved | T*D float32, row-major,
// little-endian.
//
// Manifest record (one JSON object per line):
//   {"dialog_id": "d1", "utt_id": "d1_0", "onset_sec": 0.0, "text": "hi cat",
//    "feat_path": "feats/d1_0.fea", "shape": [T, D]}
// or with "features": [[...], ...] instead of feat_path + shape. A relative
// feat_path is resolved against the manifest's directory.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcasr/batcher.hpp"
#include "dcasr/checkpoint.hpp"
#include "dcasr/tensor.hpp"
#include "dcasr/vocab.hpp"

namespace dcasr {

inline void write_features(const std::string& path, const Tensor& feats) {
  if (feats.rank() != 2) throw std::invalid_argument("write_features: expected [T, D], got " + shape_string(feats.shape()));
  std::string out = "DFEA";
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(feats.rows()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(feats.cols()));
  detail::put<std::uint32_t>(out, 0);
  for (double v : feats.values()) detail::put<float>(out, static_cast<float>(v));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Tensor read_features(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  detail::Reader r(bytes);
  if (bytes.size() < 16 || r.get_string(4) != "DFEA") throw std::runtime_error(path + ": not a feature file");
  const std::uint32_t T = r.get<std::uint32_t>();
  const std::uint32_t D = r.get<std::uint32_t>();
  r.get<std::uint32_t>();
  const std::size_t expect = 16 + static_cast<std::size_t>(T) * D * sizeof(float);
  if (bytes.size() != expect) {
    throw std::runtime_error(path + ": header says " + std::to_string(T) + "x" + std::to_string(D) +
                             " but file has " + std::to_string(bytes.size()) + " bytes");
  }
  Tensor t(Shape{T, D});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = r.get<float>();
  return t;
}

struct ManifestOptions {
  bool allow_unk = true;
};

inline std::vector<Utterance> parse_manifest(std::istream& in, const Vocab& vocab,
                                             const std::filesystem::path& base_dir,
                                             const ManifestOptions& opts = {}) {
  std::vector<Utterance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(lineno) + ": ";
    try {
      const nlohmann::json rec = nlohmann::json::parse(line);
      if (!rec.is_object()) throw std::invalid_argument("record is not an object");
      for (const char* key : {"dialog_id", "utt_id", "onset_sec", "text"}) {
        if (!rec.contains(key)) throw std::invalid_argument(std::string("missing field ") + key);
      }
      Utterance u;
      u.dialog_id = rec.at("dialog_id").get<std::string>();
      u.utt_id = rec.at("utt_id").get<std::string>();
      u.onset = rec.at("onset_sec").get<double>();
      if (!(u.onset >= 0.0)) throw std::invalid_argument("onset_sec must be >= 0");
      u.text = rec.at("text").get<std::string>();
      u.labels = vocab.encode(u.text, opts.allow_unk);
      if (rec.contains("features")) {
        const auto& rows = rec.at("features");
        if (!rows.is_array() || rows.empty()) throw std::invalid_argument("features must be a non-empty array");
        const std::size_t D = rows.at(0).size();
        u.features = Tensor(Shape{rows.size(), D});
        for (std::size_t t = 0; t < rows.size(); ++t) {
          if (rows[t].size() != D) throw std::invalid_argument("ragged features at row " + std::to_string(t));
          for (std::size_t d = 0; d < D; ++d) u.features(t, d) = rows[t][d].get<double>();
        }
      } else if (rec.contains("feat_path")) {
        if (!rec.contains("shape")) throw std::invalid_argument("missing field shape");
        const auto shape = rec.at("shape").get<std::vector<std::size_t>>();
        std::filesystem::path p = rec.at("feat_path").get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        u.features = read_features(p.string());
        if (shape.size() != 2 || u.features.shape() != Shape{shape[0], shape[1]}) {
          throw std::invalid_argument("declared shape " + shape_string(Shape(shape.begin(), shape.end())) +
                                      " does not match feature file " + shape_string(u.features.shape()));
        }
      } else {
        throw std::invalid_argument("missing field feat_path or features");
      }
      out.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(where + e.what());
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return out;
}

inline std::vector<Utterance> load_manifest(const std::string& path, const Vocab& vocab,
                                            const ManifestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  return parse_manifest(in, vocab, std::filesystem::path(path).parent_path(), opts);
}

// Raw transcripts of a manifest, without touching the feature files.
inline std::vector<std::string> manifest_texts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  std::vector<std::string> texts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      texts.push_back(nlohmann::json::parse(line).at("text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return texts;
}

inline std::string manifest_record(const Utterance& u, const std::string& feat_path) {
  nlohmann::json rec;
  rec["dialog_id"] = u.dialog_id;
  rec["utt_id"] = u.utt_id;
  rec["onset_sec"] = u.onset;
  rec["text"] = u.text;
  rec["feat_path"] = feat_path;
  rec["shape"] = {u.features.rows(), u.features.cols()};
  return rec.dump();
}

// Transcript file: one "utt_id<TAB>text[<TAB>score]" line per utterance.
struct Transcript {
  std::string utt_id;
  std::string text;
};

inline std::map<std::string, std::string> read_transcripts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open transcripts " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::invalid_argument(path + " line " + std::to_string(lineno) + ": expected utt_id<TAB>text");
    }
    std::string text = line.substr(tab + 1);
    if (auto tab2 = text.find('\t'); tab2 != std::string::npos) text.resize(tab2);
    if (!out.emplace(line.substr(0, tab), text).second) {
      throw std::invalid_argument(path + " line " + std::to_string(lineno) + ": duplicate utt_id " +
                                  line.substr(0, tab));
    }
  }
  return out;
}

inline void write_transcripts(std::ostream& os, const std::vector<Transcript>& rows) {
  for (const auto& r : rows) os << r.utt_id << '\t' << r.text << '\n';
}

}  // namespace dcasr
