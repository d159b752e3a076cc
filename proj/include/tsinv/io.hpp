#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace tsinv::io {

void WriteF64(const std::string& path, std::span<const double> values);
std::vector<double> ReadF64(const std::string& path);

void WriteJson(const std::string& path, const nlohmann::json& j);
nlohmann::json ReadJson(const std::string& path);

void EnsureDir(const std::string& dir);
std::string Join(const std::string& dir, const std::string& name);

// 64-bit FNV-1a over raw bytes, rendered as 16 hex digits.
uint64_t Fnv1a(const void* data, size_t size, uint64_t seed = 1469598103934665603ULL);
std::string Hex64(uint64_t v);

}  // namespace tsinv::io
