#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unipose/errors.hpp"

namespace unipose {

std::string base64_encode(const uint8_t* data, size_t n);
std::vector<uint8_t> base64_decode(const std::string& s);

// little-endian payload helpers for dataset/checkpoint blobs
std::string encode_f32(const std::vector<float>& v);
std::vector<float> decode_f32(const std::string& s);
std::string encode_f64(const std::vector<double>& v);
std::vector<double> decode_f64(const std::string& s);

}  // namespace unipose
