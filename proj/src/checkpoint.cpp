/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

#include "sdmae/error.hpp"

namespace sdmae {
namespace {

constexpr char kMagic[8] = {'S', 'D', 'M', 'A', 'E', 'C', 'K', 'P'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <class T>
T get_le(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{p[i]} << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

[[noreturn]] void fail(CheckpointErrorCode code, const std::string& what) {
  throw CheckpointError(code, what);
}

}  // namespace

ArchiveArray ArchiveArray::from_tensor(std::string name, const Tensor& t) {
  ArchiveArray a;
  a.name = std::move(name);
  a.shape = t.shape();
  a.f64 = t.values();
  return a;
}

ArchiveArray ArchiveArray::from_ints(std::string name, std::vector<std::int64_t> values) {
  ArchiveArray a;
  a.name = std::move(name);
  a.shape = {values.size()};
  a.integer = true;
  a.i64 = std::move(values);
  return a;
}

Tensor ArchiveArray::tensor() const {
  if (!integer) return Tensor(shape, f64);
  std::vector<double> v(i64.begin(), i64.end());
  return Tensor(shape, std::move(v));
}

const ArchiveArray* Archive::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const ArchiveArray& Archive::get(std::string_view name) const {
  const ArchiveArray* a = find(name);
  if (!a) fail(CheckpointErrorCode::kMissingArray, std::string(name));
  return *a;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::uint8_t> encode_archive(const Archive& archive) {
  std::vector<std::uint8_t> payload;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& a : archive.arrays) {
    const std::size_t count = shape_size(a.shape);
    if ((a.integer ? a.i64.size() : a.f64.size()) != count) {
      throw DimensionError("archive array '" + a.name + "' size does not match its shape");
    }
    const std::size_t offset = payload.size();
    if (a.integer) {
      for (std::int64_t v : a.i64) put_le(payload, v);
    } else {
      for (double v : a.f64) put_le(payload, v);
    }
    entries.push_back({{"name", a.name},
                       {"dtype", a.integer ? "i64" : "f64"},
                       {"shape", a.shape},
                       {"offset", offset},
                       {"nbytes", payload.size() - offset}});
  }
  nlohmann::json manifest = {{"format_version", kArchiveVersion},
                             {"fingerprint", archive.fingerprint},
                             {"arrays", entries},
                             {"payload_bytes", payload.size()},
                             {"payload_hash", hex64(fnv1a64(payload.data(), payload.size()))},
                             {"meta", archive.meta}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, kArchiveVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_le(out, fnv1a64(text.data(), text.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Archive decode_archive(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    fail(CheckpointErrorCode::kBadMagic, "missing SDMAECKP header");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kArchiveVersion) {
    fail(CheckpointErrorCode::kVersionMismatch,
         "archive version " + std::to_string(version) + ", reader supports " +
             std::to_string(kArchiveVersion));
  }
  const auto mlen = get_le<std::uint64_t>(bytes.data() + 12);
  if (mlen > bytes.size() || 28 + mlen > bytes.size()) {
    fail(CheckpointErrorCode::kCorruptManifest, "manifest length exceeds file size");
  }
  const std::uint8_t* mtext = bytes.data() + 20;
  const auto stored = get_le<std::uint64_t>(mtext + mlen);
  if (stored != fnv1a64(mtext, mlen)) fail(CheckpointErrorCode::kCorruptManifest, "manifest hash mismatch");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mtext, mtext + mlen);
  } catch (const nlohmann::json::exception& e) {
    fail(CheckpointErrorCode::kCorruptManifest, e.what());
  }

  const std::uint8_t* payload = mtext + mlen + 8;
  const std::size_t payload_size = bytes.size() - (28 + mlen);
  Archive archive;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != version) {
      fail(CheckpointErrorCode::kCorruptManifest, "manifest version disagrees with header");
    }
    if (manifest.at("payload_bytes").get<std::size_t>() != payload_size ||
        manifest.at("payload_hash").get<std::string>() != hex64(fnv1a64(payload, payload_size))) {
      fail(CheckpointErrorCode::kCorruptData, "payload size or hash mismatch");
    }
    archive.fingerprint = manifest.at("fingerprint").get<std::string>();
    archive.meta = manifest.at("meta");
    for (const auto& e : manifest.at("arrays")) {
      ArchiveArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<Shape>();
      const std::string dtype = e.at("dtype").get<std::string>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      const std::size_t count = shape_size(a.shape);
      if ((dtype != "f64" && dtype != "i64") || nbytes != count * 8 || offset > payload_size ||
          nbytes > payload_size - offset) {
        fail(CheckpointErrorCode::kCorruptManifest, "bad entry for array '" + a.name + "'");
      }
      a.integer = dtype == "i64";
      const std::uint8_t* p = payload + offset;
      if (a.integer) {
        a.i64.resize(count);
        for (std::size_t i = 0; i < count; ++i) a.i64[i] = get_le<std::int64_t>(p + 8 * i);
      } else {
        a.f64.resize(count);
        for (std::size_t i = 0; i < count; ++i) a.f64[i] = get_le<double>(p + 8 * i);
      }
      archive.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(CheckpointErrorCode::kCorruptManifest, e.what());
  }
  return archive;
}

void save_archive(const Archive& archive, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_archive(archive);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(CheckpointErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(CheckpointErrorCode::kIo, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(CheckpointErrorCode::kIo, "cannot move checkpoint into place at " + path.string());
  }
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(CheckpointErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

void verify_fingerprint(const Archive& archive, std::string_view expected) {
  if (archive.fingerprint != expected) {
    fail(CheckpointErrorCode::kFingerprintMismatch,
         "checkpoint " + archive.fingerprint + " vs current config " + std::string(expected));
  }
}

}  // namespace sdmae
