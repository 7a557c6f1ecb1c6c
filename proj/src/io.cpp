#include "dpp/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dpp {

namespace {

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  if (!f.good() && !f.eof()) throw IoError("read failed on " + path);
  return ss.str();
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f.good()) throw IoError("write failed on " + path);
}

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

// Cursor over an in-memory file. All reads are bounds-checked.
struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("truncated file " + path);
  }
  unsigned char u8() {
    need(1);
    return static_cast<unsigned char>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]);
    }
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    const std::uint64_t bits = lo | (hi << 32);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool eof() const { return pos == buf.size(); }
};

}  // namespace

Tensor read_ppm(const std::string& path) {
  const std::string data = read_file_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto next_int = [&]() -> long {
    skip_space();
    std::size_t start = pos;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos == start) throw IoError("bad PPM header in " + path);
    return std::strtol(data.c_str() + start, nullptr, 10);
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '6') {
    throw IoError("not a P6 PPM: " + path);
  }
  pos = 2;
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
    throw IoError("unsupported PPM geometry in " + path);
  }
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (pos + need > data.size()) throw IoError("truncated PPM " + path);
  Tensor img({static_cast<int>(h), static_cast<int>(w), 3});
  for (std::size_t i = 0; i < need; ++i) {
    img.data()[i] = static_cast<unsigned char>(data[pos + i]) / static_cast<double>(maxval);
  }
  return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ValidationError("write_ppm: expected HxWx3, got " + image.shape_str());
  }
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " +
                    std::to_string(image.dim(0)) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image.data()[i], 0.0, 1.0);
    out.push_back(static_cast<char>(std::lround(v * 255.0)));
  }
  write_file_bytes(path, out);
}

void write_tensor_file(const std::string& path, const Tensor& t, TensorDType dtype) {
  std::string out = "DPT1";
  out.push_back(static_cast<char>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
  out.push_back(static_cast<char>(dtype));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t.data()[i];
    switch (dtype) {
      case TensorDType::f32:
        put_f32(out, static_cast<float>(v));
        break;
      case TensorDType::f64:
        put_f64(out, v);
        break;
      case TensorDType::u16: {
        const long lv = std::lround(v);
        if (lv < 0 || lv > 65535) {
          throw ValidationError("write_tensor_file: value out of u16 range");
        }
        out.push_back(static_cast<char>(lv & 0xff));
        out.push_back(static_cast<char>((lv >> 8) & 0xff));
        break;
      }
    }
  }
  write_file_bytes(path, out);
}

Tensor read_tensor_file(const std::string& path, TensorDType* dtype_out) {
  const std::string data = read_file_bytes(path);
  Reader r{data, 0, path};
  if (r.bytes(4) != "DPT1") throw IoError("bad tensor magic in " + path);
  const int rank = r.u8();
  if (rank < 1 || rank > 8) throw IoError("bad tensor rank in " + path);
  std::vector<int> dims;
  std::size_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0 || d > (1u << 24)) throw IoError("bad tensor dim in " + path);
    dims.push_back(static_cast<int>(d));
    count *= d;
  }
  const unsigned char tag = r.u8();
  if (tag > 2) throw IoError("unknown dtype tag in " + path);
  const TensorDType dtype = static_cast<TensorDType>(tag);
  const std::size_t dsize = dtype == TensorDType::f64 ? 8 : dtype == TensorDType::f32 ? 4 : 2;
  if (data.size() - r.pos != count * dsize) {
    throw IoError("payload length mismatch in " + path);
  }
  Tensor t(dims);
  for (std::size_t i = 0; i < count; ++i) {
    switch (dtype) {
      case TensorDType::f32:
        t.data()[i] = r.f32();
        break;
      case TensorDType::f64:
        t.data()[i] = r.f64();
        break;
      case TensorDType::u16: {
        const std::uint32_t lo = r.u8();
        const std::uint32_t hi = r.u8();
        t.data()[i] = static_cast<double>(lo | (hi << 8));
        break;
      }
    }
  }
  if (dtype_out) *dtype_out = dtype;
  return t;
}

void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& recs) {
  std::string out = "DPW1";
  for (const CheckpointRecord& r : recs) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    out.push_back(static_cast<char>(r.tensor.rank()));
    for (int d = 0; d < r.tensor.rank(); ++d) {
      put_u32(out, static_cast<std::uint32_t>(r.tensor.dim(d)));
    }
    for (std::size_t i = 0; i < r.tensor.size(); ++i) {
      put_f32(out, static_cast<float>(r.tensor.data()[i]));
    }
  }
  write_file_bytes(path, out);
}

std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  const std::string data = read_file_bytes(path);
  Reader r{data, 0, path};
  if (r.bytes(4) != "DPW1") throw IoError("bad checkpoint magic in " + path);
  std::vector<CheckpointRecord> recs;
  while (!r.eof()) {
    CheckpointRecord rec;
    const std::uint32_t nlen = r.u32();
    if (nlen == 0 || nlen > 4096) throw IoError("bad record name length in " + path);
    rec.name = r.bytes(nlen);
    const int rank = r.u8();
    if (rank < 1 || rank > 8) throw IoError("bad record rank in " + path);
    std::vector<int> dims;
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 24)) throw IoError("bad record dim in " + path);
      dims.push_back(static_cast<int>(d));
      count *= d;
    }
    rec.tensor = Tensor(dims);
    for (std::size_t i = 0; i < count; ++i) rec.tensor.data()[i] = r.f32();
    recs.push_back(std::move(rec));
  }
  return recs;
}

namespace {

constexpr double kDegToRad = M_PI / 180.0;

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty()) {
    throw ValidationError("config: bad numeric value for " + key + ": '" + v + "'");
  }
  return x;
}

long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty()) {
    throw ValidationError("config: bad integer value for " + key + ": '" + v + "'");
  }
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty()) {
    throw ValidationError("config: bad integer value for " + key + ": '" + v + "'");
  }
  return static_cast<std::uint64_t>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: bad boolean value for " + key + ": '" + v + "'");
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string raw, section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ValidationError("config line " + std::to_string(lineno) + ": bad section");
      }
      section = line.substr(1, line.size() - 2);
      if (section != "train" && section != "layout" && section != "loss" &&
          section != "data") {
        throw ValidationError("config: unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || section.empty()) {
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": expected key = value inside a section");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    const std::string full = section + "." + key;

    if (full == "train.steps") cfg.steps = static_cast<int>(parse_int(full, val));
    else if (full == "train.optimizer") cfg.optimizer = val;
    else if (full == "train.lr") cfg.lr = parse_double(full, val);
    else if (full == "train.beta1") cfg.beta1 = parse_double(full, val);
    else if (full == "train.beta2") cfg.beta2 = parse_double(full, val);
    else if (full == "train.weight_decay") cfg.weight_decay = parse_double(full, val);
    else if (full == "train.seed") cfg.seed = parse_u64(full, val);
    else if (full == "train.batch_source") cfg.batch_source = static_cast<int>(parse_int(full, val));
    else if (full == "train.batch_target") cfg.batch_target = static_cast<int>(parse_int(full, val));
    else if (full == "train.eval_every") cfg.eval_every = static_cast<int>(parse_int(full, val));
    else if (full == "train.log_every") cfg.log_every = static_cast<int>(parse_int(full, val));
    else if (full == "train.stop_gradient_erp") cfg.stop_gradient_erp = parse_bool(full, val);
    else if (full == "train.supervise_tp") cfg.supervise_tp = parse_bool(full, val);
    else if (full == "train.shared_classifier") cfg.shared_classifier = parse_bool(full, val);
    else if (full == "train.ablate_seeds") cfg.ablate_seeds = static_cast<int>(parse_int(full, val));
    else if (full == "layout.fov_deg") cfg.fov = parse_double(full, val) * kDegToRad;
    else if (full == "layout.patch_size") cfg.patch_size = static_cast<int>(parse_int(full, val));
    else if (full == "loss.tau") cfg.loss.tau = parse_double(full, val);
    else if (full == "loss.alpha") cfg.loss.alpha = parse_double(full, val);
    else if (full == "loss.beta") cfg.loss.beta = parse_double(full, val);
    else if (full == "loss.num_classes") cfg.loss.num_classes = static_cast<int>(parse_int(full, val));
    else if (full == "loss.kl_epsilon") cfg.loss.kl_epsilon = parse_double(full, val);
    else if (full == "data.erp_height") cfg.erp_height = static_cast<int>(parse_int(full, val));
    else if (full == "data.erp_width") cfg.erp_width = static_cast<int>(parse_int(full, val));
    else if (full == "data.source_count") cfg.source_count = static_cast<int>(parse_int(full, val));
    else if (full == "data.target_count") cfg.target_count = static_cast<int>(parse_int(full, val));
    else if (full == "data.eval_count") cfg.eval_count = static_cast<int>(parse_int(full, val));
    else if (full == "data.data_seed") cfg.data_seed = parse_u64(full, val);
    else if (full == "data.num_objects") cfg.num_objects = static_cast<int>(parse_int(full, val));
    else if (full == "data.style_brightness") cfg.source_style.brightness = parse_double(full, val);
    else if (full == "data.style_contrast") cfg.source_style.contrast = parse_double(full, val);
    else if (full == "data.style_hue_deg") cfg.source_style.hue_rotation = parse_double(full, val) * kDegToRad;
    else if (full == "data.style_noise") cfg.source_style.noise_sigma = parse_double(full, val);
    else if (full == "data.polar_bias") cfg.polar_bias = parse_bool(full, val);
    else throw ValidationError("config: unknown key " + full);
  }
  return cfg;
}

TrainConfig read_config(const std::string& path) {
  return parse_config_text(read_file_bytes(path));
}

std::vector<std::string> config_keys() {
  return {
      "train.steps", "train.optimizer", "train.lr", "train.beta1", "train.beta2",
      "train.weight_decay", "train.seed", "train.batch_source", "train.batch_target",
      "train.eval_every", "train.log_every", "train.stop_gradient_erp",
      "train.supervise_tp", "train.shared_classifier", "train.ablate_seeds",
      "layout.fov_deg", "layout.patch_size",
      "loss.tau", "loss.alpha", "loss.beta", "loss.num_classes", "loss.kl_epsilon",
      "data.erp_height", "data.erp_width", "data.source_count", "data.target_count",
      "data.eval_count", "data.data_seed", "data.num_objects", "data.style_brightness",
      "data.style_contrast", "data.style_hue_deg", "data.style_noise", "data.polar_bias",
  };
}

}  // namespace dpp
