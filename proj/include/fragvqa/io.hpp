#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fragvqa/tensor.hpp"

namespace fragvqa::io {

using Json = nlohmann::ordered_json;

// Checkpoint container: a JSON header (metadata + tensor directory) followed
// by raw little-endian float64 payloads in directory order.
struct Archive {
    Json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_tensor_archive(const std::string& path, const Archive& a);
Archive load_tensor_archive(const std::string& path);

// Clip payloads are stored as raw little-endian float32 so corpora stay small;
// shapes live in the corpus manifest.
void save_clip_f32(const std::string& path, const Tensor& t);
Tensor load_clip_f32(const std::string& path, const std::vector<std::int64_t>& shape);

Json load_json(const std::string& path);
void save_json(const std::string& path, const Json& j, int indent = 2);
void save_text(const std::string& path, const std::string& text);

// Stable fingerprint of a canonicalized JSON document; recorded in run
// reports so downstream artifacts can be tied to the exact configuration.
std::string json_fingerprint(const Json& j);

void ensure_dir(const std::string& path);

}  // namespace fragvqa::io
