#pragma once

#include <string>
#include <vector>

#include "dpp/errors.hpp"
#include "dpp/tensor.hpp"
#include "dpp/trainer.hpp"

namespace dpp {

// Binary PPM (P6, 8-bit). Values are mapped between [0,1] doubles and 0..255
// bytes; write(read(f)) reproduces f byte for byte.
Tensor read_ppm(const std::string& path);                     // H x W x 3
void write_ppm(const std::string& path, const Tensor& image);

// Tensor container: magic "DPT1", u8 rank, rank x u32 little-endian dims,
// u8 dtype tag (0 = f32, 1 = f64, 2 = u16 labels), row-major payload.
enum class TensorDType : unsigned char { f32 = 0, f64 = 1, u16 = 2 };

void write_tensor_file(const std::string& path, const Tensor& t, TensorDType dtype);
Tensor read_tensor_file(const std::string& path, TensorDType* dtype_out = nullptr);

// Checkpoints: magic "DPW1", then per record a u32 name length, the name
// bytes, u8 rank, rank x u32 dims, and a float32 little-endian payload.
void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& recs);
std::vector<CheckpointRecord> read_checkpoint(const std::string& path);

// Plain-text configuration: `key = value` lines under [train], [layout],
// [loss] and [data] sections. '#' starts a comment. Every key has a default
// (the TrainConfig initializers); unknown sections or keys are hard errors.
// Angles are written in degrees in the file and converted here.
TrainConfig parse_config_text(const std::string& text);
TrainConfig read_config(const std::string& path);

// Documented key list, one "section.key" per entry (for --help output).
std::vector<std::string> config_keys();

}  // namespace dpp
