#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "trm/error.hpp"

// Little-endian POD helpers for the checkpoint and quantizer formats.

namespace trm::io {

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("truncated file: " + path.string());
  return v;
}

}  // namespace trm::io
