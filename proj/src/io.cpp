// SPDX-License-Identifier: Apache-2.0
#include "egfuse/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace egfuse {

namespace fs = std::filesystem;

namespace {

constexpr char kTensorMagic[4] = {'E', 'G', 'T', '0'};
constexpr char kLabelMagic[4] = {'E', 'G', 'L', '0'};
constexpr char kCheckpointMagic[4] = {'E', 'G', 'C', '0'};

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
public:
  Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  void expect_magic(const char (&magic)[4]) {
    if (data_.size() < pos_ + 4 || std::memcmp(data_.data() + pos_, magic, 4) != 0) {
      throw FormatError(path_ + ": bad magic");
    }
    pos_ += 4;
  }

  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(data_[pos_]) |
                 (static_cast<uint16_t>(static_cast<uint8_t>(data_[pos_ + 1])) << 8);
    pos_ += 2;
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void done() {
    if (pos_ != data_.size()) throw FormatError(path_ + ": trailing bytes");
  }

private:
  void need(size_t n) {
    if (data_.size() - pos_ < n) throw FormatError(path_ + ": truncated payload");
  }

  const std::string& data_;
  std::string path_;
  size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void append_tensor_body(std::string& out, const Tensor& t) {
  put_u32(out, 4);
  for (int d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
  for (float v : t.raw()) put_f32(out, v);
}

Tensor read_tensor_body(Reader& r, const std::string& path) {
  const uint32_t rank = r.u32();
  if (rank != 4) throw FormatError(path + ": unsupported rank");
  uint32_t dims[4];
  uint64_t total = 1;
  for (auto& d : dims) {
    d = r.u32();
    total *= d;
  }
  if (total > (1ull << 31)) throw FormatError(path + ": payload too large");
  Tensor t(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
           static_cast<int>(dims[3]));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = r.f32();
  return t;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(tmp.string() + ": cannot open for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      fs::remove(tmp);
      throw FormatError(tmp.string() + ": short write");
    }
  }
  fs::rename(tmp, target);
}

void write_tensor_file(const std::string& path, const Tensor& t) {
  std::string out(kTensorMagic, 4);
  append_tensor_body(out, t);
  write_file_atomic(path, out);
}

Tensor read_tensor_file(const std::string& path) {
  const std::string data = slurp(path);
  Reader r(data, path);
  r.expect_magic(kTensorMagic);
  Tensor t = read_tensor_body(r, path);
  r.done();
  return t;
}

void write_label_file(const std::string& path, const LabelMap& m) {
  std::string out(kLabelMagic, 4);
  put_u32(out, static_cast<uint32_t>(m.height));
  put_u32(out, static_cast<uint32_t>(m.width));
  out.append(reinterpret_cast<const char*>(m.ids.data()), m.ids.size());
  write_file_atomic(path, out);
}

LabelMap read_label_file(const std::string& path) {
  const std::string data = slurp(path);
  Reader r(data, path);
  r.expect_magic(kLabelMagic);
  const uint32_t h = r.u32();
  const uint32_t w = r.u32();
  if (static_cast<uint64_t>(h) * w > (1ull << 31)) throw FormatError(path + ": payload too large");
  LabelMap m(static_cast<int>(h), static_cast<int>(w));
  const std::string payload = r.bytes(static_cast<size_t>(h) * w);
  std::memcpy(m.ids.data(), payload.data(), payload.size());
  r.done();
  return m;
}

void write_checkpoint(const std::string& path, const ModelParams& params) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, static_cast<uint32_t>(params.table().size()));
  for (const auto& [name, p] : params.table()) {
    if (name.size() > 0xffff) throw FormatError("checkpoint: parameter name too long");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    append_tensor_body(out, p.value);
  }
  write_file_atomic(path, out);
}

ModelParams read_checkpoint(const std::string& path) {
  const std::string data = slurp(path);
  Reader r(data, path);
  r.expect_magic(kCheckpointMagic);
  const uint32_t count = r.u32();
  ModelParams params;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = r.u16();
    const std::string name = r.bytes(len);
    params.add(name, read_tensor_body(r, path));
  }
  r.done();
  return params;
}

namespace {
std::string sample_dir_name(int idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05d", idx);
  return buf;
}
}  // namespace

void write_dataset(const std::string& dir, const Dataset& data) {
  fs::create_directories(dir);
  std::string manifest;
  if (!data.empty()) {
    for (const auto& name : data[0].modality_names) manifest += name + "\n";
  }
  write_file_atomic((fs::path(dir) / "modalities.txt").string(), manifest);
  for (size_t i = 0; i < data.size(); ++i) {
    const fs::path sdir = fs::path(dir) / sample_dir_name(static_cast<int>(i));
    fs::create_directories(sdir);
    const SampleRecord& rec = data[i];
    if (rec.modality_names != data[0].modality_names) {
      throw DataError("write_dataset: inconsistent modality layout across samples");
    }
    for (size_t k = 0; k < rec.modalities.size(); ++k) {
      write_tensor_file((sdir / (rec.modality_names[k] + ".egt")).string(), rec.modalities[k]);
    }
    write_label_file((sdir / "label.egl").string(), rec.label);
  }
}

Dataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path manifest = root / "modalities.txt";
  if (!fs::exists(manifest)) throw FormatError(manifest.string() + ": missing modality manifest");
  std::vector<std::string> names;
  {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) names.push_back(line);
    }
  }
  Dataset data;
  for (int i = 0;; ++i) {
    const fs::path sdir = root / sample_dir_name(i);
    if (!fs::exists(sdir)) break;
    SampleRecord rec;
    rec.modality_names = names;
    for (const auto& name : names) {
      rec.modalities.push_back(read_tensor_file((sdir / (name + ".egt")).string()));
    }
    rec.label = read_label_file((sdir / "label.egl").string());
    data.push_back(std::move(rec));
  }
  return data;
}

}  // namespace egfuse
