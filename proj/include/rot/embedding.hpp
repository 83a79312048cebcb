#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rot/errors.hpp"
#include "rot/hash.hpp"
#include "rot/http.hpp"
#include "rot/log.hpp"
#include "rot/text.hpp"

namespace rot {

inline constexpr double kUnitNormTolerance = 1e-6;

/// Plain left-to-right dot product. Every similarity in the library goes through
/// this one loop so that scores are bit-identical wherever they are computed.
inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Maps a cosine in [-1, 1] onto [0, 1].
constexpr double rescale_cosine(double cosine) noexcept { return (cosine + 1.0) / 2.0; }

/// An L2-normalized embedding.
class UnitVector {
 public:
  UnitVector() = default;

  /// Scales `raw` to unit length. Zero or non-finite input is rejected.
  static UnitVector normalize(std::vector<double> raw) {
    if (raw.empty()) throw ValidationError("empty embedding");
    double sq = 0.0;
    for (double x : raw) {
      if (!std::isfinite(x)) throw ValidationError("non-finite embedding component");
      sq += x * x;
    }
    if (sq == 0.0) throw ValidationError("zero embedding vector cannot be normalized");
    const double norm = std::sqrt(sq);
    if (norm != 1.0)
      for (double& x : raw) x /= norm;
    UnitVector v;
    v.values_ = std::move(raw);
    return v;
  }

  /// Wraps values that are already unit length (within kUnitNormTolerance).
  static UnitVector from_normalized(std::vector<double> values) {
    double sq = 0.0;
    for (double x : values) sq += x * x;
    if (values.empty() || !std::isfinite(sq) || std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance)
      throw ValidationError("vector is not unit length");
    UnitVector v;
    v.values_ = std::move(values);
    return v;
  }

  std::span<const double> values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }
  double norm() const noexcept { return std::sqrt(dot(values_, values_)); }

  bool operator==(const UnitVector&) const = default;

 private:
  std::vector<double> values_;
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ConfigError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  return dot(a, b);
}

inline double cosine(const UnitVector& a, const UnitVector& b) { return cosine(a.values(), b.values()); }

/// (cosine + 1) / 2, in [0, 1].
inline double normalized_similarity(std::span<const double> a, std::span<const double> b) {
  return rescale_cosine(cosine(a, b));
}

inline double normalized_similarity(const UnitVector& a, const UnitVector& b) {
  return normalized_similarity(a.values(), b.values());
}

/// Cache key for a sanitized text under one provider.
inline std::string content_key(std::string_view provider_id, std::string_view sanitized_text) {
  return to_hex(Fnv1a64{}.field(provider_id).field(sanitized_text).digest());
}

/// Source of raw (not necessarily normalized) embeddings.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t max_batch() const { return 64; }
  /// One vector per input text, in order. May throw TransportError or EmbeddingError.
  virtual std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) = 0;
};

/// Deterministic pseudo-embedder: hashes the text to a seed and draws uniform
/// components from a seeded mt19937_64. Identical output on every platform.
class HashEmbedder final : public EmbeddingProvider {
 public:
  HashEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
  }

  std::string id() const override {
    return "hash-v1:seed=" + std::to_string(seed_) + ":dim=" + std::to_string(dim_);
  }
  std::size_t dim() const override { return dim_; }
  std::size_t max_batch() const override { return 256; }

  std::vector<double> raw(std::string_view text) const {
    std::mt19937_64 gen(fnv1a64(text) ^ (seed_ * 0x9E3779B97F4A7C15ULL));
    std::vector<double> v(dim_);
    for (double& x : v) x = static_cast<double>(gen() >> 11) * 0x1.0p-52 - 1.0;
    return v;
  }

  std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) override {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(raw(t));
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Content-addressed, write-once store of unit embeddings for one provider.
/// Concurrent readers, serialized writers.
class EmbeddingCache {
 public:
  static constexpr int kFormatVersion = 1;
  static constexpr std::string_view kFormatName = "rot-embedding-cache";

  EmbeddingCache(std::string provider_id, std::size_t dim) : provider_id_(std::move(provider_id)), dim_(dim) {
    if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
  }

  EmbeddingCache(const EmbeddingCache& other) : provider_id_(other.provider_id_), dim_(other.dim_) {
    std::shared_lock lock(other.mutex_);
    entries_ = other.entries_;
  }

  const std::string& provider_id() const noexcept { return provider_id_; }
  std::size_t dim() const noexcept { return dim_; }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  std::optional<UnitVector> find(const std::string& key) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  /// Stores `v` under `key` unless the key is already present. Returns true if stored.
  bool insert(const std::string& key, UnitVector v) {
    if (v.dim() != dim_)
      throw ConfigError("cache dimension is " + std::to_string(dim_) + ", got " + std::to_string(v.dim()));
    std::unique_lock lock(mutex_);
    return entries_.emplace(key, std::move(v)).second;
  }

  /// Sanitizes `text` and looks it up.
  std::optional<UnitVector> find_text(std::string_view text) const {
    return find(content_key(provider_id_, text::sanitize(text)));
  }
  bool insert_text(std::string_view text, UnitVector v) {
    return insert(content_key(provider_id_, text::sanitize(text)), std::move(v));
  }

  /// JSONL: a header object, then one {"key","vector"} object per entry in key order.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << nlohmann::json{{"format", kFormatName}, {"version", kFormatVersion}, {"provider_id", provider_id_},
                          {"dim", dim_}}
               .dump()
        << '\n';
    std::shared_lock lock(mutex_);
    for (const auto& [key, v] : entries_) {
      nlohmann::json vec = std::vector<double>(v.values().begin(), v.values().end());
      out << nlohmann::json{{"key", key}, {"vector", std::move(vec)}}.dump() << '\n';
    }
    if (!out) throw Error("write failed: " + path.string());
  }

  static EmbeddingCache load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty embedding cache file", 1);
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed cache header: ") + e.what(), 1);
    }
    if (header.value("format", "") != kFormatName) throw ParseError("not an embedding cache file", 1);
    if (header.value("version", 0) != kFormatVersion)
      throw FormatVersionError("embedding cache version " + header.value("version", nlohmann::json()).dump() +
                               " is not supported (expected " + std::to_string(kFormatVersion) + ")");
    EmbeddingCache cache(header.at("provider_id").get<std::string>(), header.at("dim").get<std::size_t>());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        auto values = j.at("vector").get<std::vector<double>>();
        if (values.size() != cache.dim_) throw ParseError("vector dimension mismatch", lineno);
        cache.entries_.emplace(j.at("key").get<std::string>(), UnitVector::from_normalized(std::move(values)));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed cache entry: ") + e.what(), lineno);
      } catch (const ValidationError& e) {
        throw ParseError(e.what(), lineno);
      }
    }
    return cache;
  }

 private:
  std::string provider_id_;
  std::size_t dim_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, UnitVector> entries_;
};

/// Read-only provider serving vectors from a cache file. Unknown texts fail.
class PrecomputedEmbedder final : public EmbeddingProvider {
 public:
  explicit PrecomputedEmbedder(std::shared_ptr<const EmbeddingCache> cache) : cache_(std::move(cache)) {}

  std::string id() const override { return cache_->provider_id(); }
  std::size_t dim() const override { return cache_->dim(); }
  std::size_t max_batch() const override { return 4096; }

  std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) override {
    std::vector<std::vector<double>> out;
    std::vector<std::size_t> missing;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto hit = cache_->find_text(texts[i]);
      if (!hit) {
        missing.push_back(i);
        out.emplace_back();
        continue;
      }
      out.emplace_back(hit->values().begin(), hit->values().end());
    }
    if (!missing.empty())
      throw EmbeddingError(std::to_string(missing.size()) + " text(s) absent from precomputed cache", missing);
    return out;
  }

 private:
  std::shared_ptr<const EmbeddingCache> cache_;
};

/// Client for an OpenAI-compatible `/embeddings` endpoint.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  HttpEmbedder(http::Endpoint endpoint, std::string model, std::size_t dim, std::size_t batch = 32)
      : endpoint_(std::move(endpoint)), model_(std::move(model)), dim_(dim), batch_(batch) {
    if (dim_ == 0) throw ConfigError("embedding dimension must be configured for the HTTP provider");
  }

  std::string id() const override { return "http:" + model_; }
  std::size_t dim() const override { return dim_; }
  std::size_t max_batch() const override { return batch_; }

  /// Texts longer than this are sent as-is and left to provider-side truncation.
  std::size_t long_text_warning_chars = 32768;

  std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) override {
    for (const auto& t : texts)
      if (t.size() > long_text_warning_chars)
        log::warn("embedding input of " + std::to_string(t.size()) + " chars may be truncated by the provider");
    nlohmann::json body{{"model", model_}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    const auto raw = http::post_json(endpoint_, "/embeddings", body);
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      throw TransportError("embedding response is not JSON: " + http::excerpt(raw));
    }
    const auto& data = reply.at("data");
    if (!data.is_array() || data.size() != texts.size())
      throw EmbeddingError("embedding response has wrong item count", {});
    std::vector<std::vector<double>> out(texts.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t slot = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
      if (slot >= out.size()) throw EmbeddingError("embedding response index out of range", {});
      out[slot] = data[i].at("embedding").get<std::vector<double>>();
    }
    return out;
  }

 private:
  http::Endpoint endpoint_;
  std::string model_;
  std::size_t dim_;
  std::size_t batch_;
};

struct EmbedOptions {
  /// Maximum provider batches in flight.
  std::size_t concurrency = 8;
};

/// Embeds `texts` (sanitized first) through `cache`, calling `provider` only for
/// misses. Output order matches input order. On failure throws EmbeddingError whose
/// indices refer to `texts`; it is retryable() when only transport errors occurred.
inline std::vector<UnitVector> embed(std::span<const std::string> texts, EmbeddingProvider& provider,
                                     EmbeddingCache& cache, const EmbedOptions& opts = {}) {
  if (cache.provider_id() != provider.id())
    throw ConfigError("cache belongs to provider '" + cache.provider_id() + "', not '" + provider.id() + "'");
  if (cache.dim() != provider.dim())
    throw ConfigError("cache dimension " + std::to_string(cache.dim()) + " does not match provider dimension " +
                      std::to_string(provider.dim()));

  std::vector<std::optional<UnitVector>> result(texts.size());
  std::vector<std::string> keys(texts.size());
  std::vector<std::string> miss_texts;
  std::unordered_map<std::string, std::vector<std::size_t>> miss_slots;  // key -> input indices
  std::vector<std::string> miss_keys;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto clean = text::sanitize(texts[i]);
    keys[i] = content_key(provider.id(), clean);
    if (auto hit = cache.find(keys[i])) {
      result[i] = std::move(*hit);
      continue;
    }
    auto [it, fresh] = miss_slots.try_emplace(keys[i]);
    it->second.push_back(i);
    if (fresh) {
      miss_keys.push_back(keys[i]);
      miss_texts.push_back(std::move(clean));
    }
  }

  const std::size_t batch = std::max<std::size_t>(1, provider.max_batch());
  const std::size_t n_batches = (miss_texts.size() + batch - 1) / batch;
  std::vector<std::vector<std::vector<double>>> raw(n_batches);
  std::vector<std::exception_ptr> errors(n_batches);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t b = next++; b < n_batches; b = next++) {
      const std::size_t lo = b * batch;
      const std::size_t hi = std::min(miss_texts.size(), lo + batch);
      try {
        raw[b] = provider.embed_batch(std::span<const std::string>(miss_texts).subspan(lo, hi - lo));
        if (raw[b].size() != hi - lo) throw EmbeddingError("provider returned wrong number of vectors", {});
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(1, opts.concurrency), n_batches);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::vector<std::size_t> failed;
  std::string first_error;
  bool all_transport = true;
  auto fail_miss = [&](std::size_t miss_index, const std::string& why) {
    for (std::size_t slot : miss_slots[miss_keys[miss_index]]) failed.push_back(slot);
    if (first_error.empty()) first_error = why;
  };
  // normalizes and caches batch b; `partial` skips slots left empty after a partial failure
  auto store = [&](std::size_t b, std::size_t lo, std::size_t hi, bool partial) {
    for (std::size_t m = lo; m < hi; ++m) {
      auto& values = raw[b][m - lo];
      if (partial && values.empty()) continue;
      if (values.size() != provider.dim())
        throw ConfigError("provider returned dimension " + std::to_string(values.size()) + ", configured " +
                          std::to_string(provider.dim()));
      try {
        auto v = UnitVector::normalize(std::move(values));
        cache.insert(miss_keys[m], v);
        for (std::size_t slot : miss_slots[miss_keys[m]]) result[slot] = v;
      } catch (const ValidationError& e) {
        all_transport = false;
        fail_miss(m, e.what());
      }
    }
  };
  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t lo = b * batch;
    const std::size_t hi = std::min(miss_texts.size(), lo + batch);
    if (errors[b]) {
      std::string why;
      try {
        std::rethrow_exception(errors[b]);
      } catch (const TransportError& e) {
        why = e.what();
      } catch (const EmbeddingError& e) {
        all_transport = false;
        why = e.what();
        if (!e.failed_indices().empty()) {
          // the provider named the bad texts; ask again for the rest of the batch alone
          std::vector<std::size_t> rest;
          std::vector<std::string> rest_texts;
          for (std::size_t m = lo; m < hi; ++m) {
            if (std::find(e.failed_indices().begin(), e.failed_indices().end(), m - lo) != e.failed_indices().end())
              fail_miss(m, why);
            else {
              rest.push_back(m);
              rest_texts.push_back(miss_texts[m]);
            }
          }
          if (rest.empty()) continue;
          std::vector<std::vector<double>> again;
          try {
            again = provider.embed_batch(rest_texts);
          } catch (const std::exception& retry_error) {
            for (std::size_t m : rest) fail_miss(m, std::string("batch aborted: ") + retry_error.what());
            continue;
          }
          if (again.size() != rest.size()) {
            for (std::size_t m : rest) fail_miss(m, "provider returned wrong number of vectors");
            continue;
          }
          raw[b].assign(hi - lo, {});
          for (std::size_t k = 0; k < rest.size(); ++k) raw[b][rest[k] - lo] = std::move(again[k]);
          store(b, lo, hi, true);
          continue;
        }
      } catch (const std::exception& e) {
        all_transport = false;
        why = e.what();
      }
      for (std::size_t m = lo; m < hi; ++m) fail_miss(m, why);
      continue;
    }
    store(b, lo, hi, false);
  }
  if (!failed.empty()) {
    std::sort(failed.begin(), failed.end());
    const std::string msg = std::to_string(failed.size()) + " text(s) failed to embed: " + first_error;
    throw EmbeddingError(msg, std::move(failed), all_transport);
  }

  std::vector<UnitVector> out;
  out.reserve(texts.size());
  for (auto& r : result) out.push_back(std::move(*r));
  return out;
}

inline UnitVector embed_one(std::string_view text, EmbeddingProvider& provider, EmbeddingCache& cache) {
  std::string t(text);
  return std::move(embed(std::span<const std::string>(&t, 1), provider, cache).front());
}

}  // namespace rot
