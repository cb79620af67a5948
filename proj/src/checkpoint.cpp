#include "cloze/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace cloze {

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'C', 'O', 'R', 'F'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ContractError(path_ + ": truncated container");
  }
  const std::string& data_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ContractError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.tag));
    if (a.tag == ArrayTag::text) {
      put<std::uint32_t>(out, 1);
      put<std::uint64_t>(out, a.text.size());
      out += a.text;
      continue;
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.value.shape.size()));
    for (auto e : a.value.shape) put<std::uint64_t>(out, e);
    if (shape_size(a.value.shape) != a.value.size())
      throw ContractError("array '" + a.name + "': shape does not match payload");
    for (double v : a.value.values) {
      if (a.tag == ArrayTag::f64) put<double>(out, v);
      else put<float>(out, static_cast<float>(v));
    }
  }
  write_file_atomic(path, out);
}

std::vector<NamedArray> read_arrays(const std::string& path) {
  const std::string data = read_file(path);
  Reader r(data, path);
  if (r.bytes(4) != std::string(kMagic, 4)) throw ContractError(path + ": not a CORF container");
  const auto version = r.get<std::uint32_t>();
  if (version != kContainerVersion)
    throw ContractError(path + ": unsupported container version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedArray> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.bytes(r.get<std::uint32_t>());
    const auto tag = r.get<std::uint8_t>();
    if (tag > 2) throw ContractError(path + ": unknown precision tag " + std::to_string(tag));
    a.tag = static_cast<ArrayTag>(tag);
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint64_t>();
    if (a.tag == ArrayTag::text) {
      if (rank != 1) throw ContractError(path + ": text array must have rank 1");
      a.text = r.bytes(shape[0]);
    } else {
      a.value = Tensor(shape);
      for (auto& v : a.value.values)
        v = a.tag == ArrayTag::f64 ? r.get<double>() : static_cast<double>(r.get<float>());
    }
    arrays.push_back(std::move(a));
  }
  if (!r.done()) throw ContractError(path + ": trailing bytes after arrays");
  return arrays;
}

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : parameters)
    if (a.name == name) return &a;
  return nullptr;
}

void Checkpoint::save(const std::string& path, ArrayTag precision) const {
  std::vector<NamedArray> arrays;
  arrays.push_back({"meta.fingerprint", ArrayTag::text, {}, fingerprint});
  arrays.push_back({"meta.step", ArrayTag::text, {}, std::to_string(step)});
  if (!vocabulary.empty()) arrays.push_back({"meta.vocab", ArrayTag::text, {}, vocabulary});
  for (const auto& group : {&parameters, &moments})
    for (const auto& a : *group) arrays.push_back({a.name, precision, a.value, {}});
  write_arrays(path, arrays);
}

Checkpoint Checkpoint::load(const std::string& path) {
  Checkpoint c;
  bool has_fp = false;
  for (auto& a : read_arrays(path)) {
    if (a.name == "meta.fingerprint") {
      c.fingerprint = a.text;
      has_fp = true;
    } else if (a.name == "meta.step") {
      c.step = std::stoull(a.text);
    } else if (a.name == "meta.vocab") {
      c.vocabulary = a.text;
    } else if (a.name.rfind("m.", 0) == 0 || a.name.rfind("v.", 0) == 0) {
      c.moments.push_back(std::move(a));
    } else {
      c.parameters.push_back(std::move(a));
    }
  }
  if (!has_fp) throw ContractError(path + ": checkpoint without fingerprint");
  return c;
}

Checkpoint capture(const ParameterStore& store, const std::string& fingerprint) {
  Checkpoint c;
  c.fingerprint = fingerprint;
  for (const Parameter* p : store.all()) c.parameters.push_back({p->name, ArrayTag::f64, p->value, {}});
  return c;
}

void restore(ParameterStore& store, const Checkpoint& ckpt, const std::string& fingerprint) {
  if (ckpt.fingerprint != fingerprint)
    throw ContractError("checkpoint fingerprint mismatch:\n  file:  " + ckpt.fingerprint +
                        "\n  model: " + fingerprint);
  if (ckpt.parameters.size() != store.size())
    throw ContractError("checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                        " parameters, model has " + std::to_string(store.size()));
  for (Parameter* p : store.all()) {
    const NamedArray* a = ckpt.find(p->name);
    if (!a) throw ContractError("checkpoint lacks parameter " + p->name);
    if (a->value.shape != p->value.shape)
      throw ContractError("parameter " + p->name + ": shape " + shape_string(a->value.shape) +
                          " != " + shape_string(p->value.shape));
    p->value = a->value;
  }
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw ContractError("average_checkpoints: nothing to average");
  const Checkpoint& first = checkpoints.front();
  for (const auto& c : checkpoints)
    if (c.fingerprint != first.fingerprint)
      throw ContractError("average_checkpoints: fingerprint mismatch");

  Checkpoint out;
  out.fingerprint = first.fingerprint;
  out.vocabulary = first.vocabulary;
  for (const auto& c : checkpoints) out.step = std::max(out.step, c.step);
  const double n = static_cast<double>(checkpoints.size());
  for (const auto& a : first.parameters) {
    // Sorted summation per element: the mean ignores input order bitwise.
    NamedArray avg{a.name, ArrayTag::f64, Tensor(a.value.shape), {}};
    std::vector<const NamedArray*> parts;
    for (const auto& c : checkpoints) {
      const NamedArray* p = c.find(a.name);
      if (!p || p->value.shape != a.value.shape)
        throw ContractError("average_checkpoints: parameter " + a.name + " missing or reshaped");
      parts.push_back(p);
    }
    std::vector<double> column(parts.size());
    for (std::size_t i = 0; i < a.value.size(); ++i) {
      for (std::size_t k = 0; k < parts.size(); ++k) column[k] = parts[k]->value.values[i];
      std::sort(column.begin(), column.end());
      if (column.front() == column.back()) {
        avg.value.values[i] = column.front();
        continue;
      }
      double s = 0.0;
      for (double v : column) s += v;
      avg.value.values[i] = s / n;
    }
    out.parameters.push_back(std::move(avg));
  }
  if (out.parameters.size() != first.parameters.size() ||
      std::any_of(checkpoints.begin(), checkpoints.end(),
                  [&](const Checkpoint& c) { return c.parameters.size() != first.parameters.size(); }))
    throw ContractError("average_checkpoints: parameter sets differ");
  return out;
}

Checkpoint average_checkpoints(const std::vector<std::string>& paths) {
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(Checkpoint::load(p));
  return average_checkpoints(cks);
}

}  // namespace cloze
