#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "earlystop/common/encoding.hpp"
#include "earlystop/common/fileio.hpp"
#include "earlystop/numkit/adam.hpp"
#include "earlystop/numkit/layers.hpp"
#include "earlystop/numkit/tensor.hpp"

namespace earlystop::nk {

inline constexpr const char* kCheckpointFormat = "earlystop-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// On-disk layout (see docs/checkpoint-format.md):
//   line 1     compact JSON header: format, version, kind, meta, layers, arrays[{name, shape}]
//   line 2..   "<name> <base64 of little-endian float32 values>", one per array, header order
class Checkpoint {
 public:
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<LayerSpec> layers;

  template <class T>
  void add(const std::string& name, const Tensor<T>& t) {
    if (find(name) != nullptr) throw StateError("duplicate checkpoint array '" + name + "'");
    arrays_.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
  }

  void add_raw(NamedArray array) {
    if (find(array.name) != nullptr) throw StateError("duplicate checkpoint array '" + array.name + "'");
    arrays_.push_back(std::move(array));
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const NamedArray& array(const std::string& name) const {
    const auto* a = find(name);
    if (a == nullptr) throw CompatibilityError("checkpoint has no array named '" + name + "'");
    return *a;
  }

  // Copy a stored array into `t`, which must already have the stored shape.
  template <class T>
  void load_into(const std::string& name, Tensor<T>& t) const {
    const auto& a = array(name);
    if (a.shape != t.shape()) {
      throw CompatibilityError("checkpoint array '" + name + "' has shape " + shape_string(a.shape) +
                               ", model expects " + shape_string(t.shape()));
    }
    for (std::size_t i = 0; i < a.values.size(); ++i) t[i] = static_cast<T>(a.values[i]);
  }

  const std::vector<NamedArray>& arrays() const { return arrays_; }

  std::string serialize() const {
    nlohmann::json header;
    header["format"] = kCheckpointFormat;
    header["version"] = kCheckpointVersion;
    header["kind"] = kind;
    header["meta"] = meta;
    header["layers"] = layers;
    auto listing = nlohmann::json::array();
    for (const auto& a : arrays_) listing.push_back({{"name", a.name}, {"shape", a.shape}});
    header["arrays"] = listing;
    std::string out = header.dump();
    out += '\n';
    for (const auto& a : arrays_) {
      out += a.name;
      out += ' ';
      out += floats_to_base64(a.values);
      out += '\n';
    }
    return out;
  }

  static Checkpoint parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty checkpoint");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    if (header.value("format", "") != kCheckpointFormat) throw IoError("not an earlystop checkpoint");
    if (header.value("version", 0) != kCheckpointVersion) {
      throw CompatibilityError("unsupported checkpoint version " + header.value("version", nlohmann::json()).dump());
    }
    Checkpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.meta = header.at("meta");
    ck.layers = header.at("layers").get<std::vector<LayerSpec>>();
    for (const auto& entry : header.at("arrays")) {
      if (!std::getline(in, line)) throw IoError("checkpoint truncated before array payloads");
      const auto space = line.find(' ');
      const std::string name = entry.at("name").get<std::string>();
      if (space == std::string::npos || line.substr(0, space) != name) {
        throw IoError("checkpoint payload order does not match header at '" + name + "'");
      }
      NamedArray a{name, entry.at("shape").get<Shape>(), base64_to_floats(std::string_view(line).substr(space + 1))};
      if (a.values.size() != shape_size(a.shape)) {
        throw IoError("checkpoint array '" + name + "' payload length does not match its shape");
      }
      ck.arrays_.push_back(std::move(a));
    }
    return ck;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }
  static Checkpoint load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

 private:
  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays_)
      if (a.name == name) return &a;
    return nullptr;
  }

  std::vector<NamedArray> arrays_;
};

template <class T>
void store_parameters(Checkpoint& ck, const ParamRefs<T>& params, const BufferRefs<T>& buffers = {}) {
  for (const auto* p : params) ck.add(p->name, p->value);
  for (const auto& b : buffers) ck.add(b.name, *b.tensor);
}

template <class T>
void restore_parameters(const Checkpoint& ck, const ParamRefs<T>& params, const BufferRefs<T>& buffers = {}) {
  for (auto* p : params) ck.load_into(p->name, p->value);
  for (const auto& b : buffers) ck.load_into(b.name, *b.tensor);
}

// Optimizer moments are stored as "<prefix>/<param>.m|.v"; the step count
// goes into meta under the prefix.
template <class T>
void store_optimizer(Checkpoint& ck, const std::string& prefix, Adam<T>& opt, const ParamRefs<T>& params) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    ck.add(prefix + "/" + params[k]->name + ".m", opt.first_moments().at(k));
    ck.add(prefix + "/" + params[k]->name + ".v", opt.second_moments().at(k));
  }
  ck.meta[prefix + "_steps"] = opt.steps();
}

template <class T>
void restore_optimizer(const Checkpoint& ck, const std::string& prefix, Adam<T>& opt, const ParamRefs<T>& params) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    ck.load_into(prefix + "/" + params[k]->name + ".m", opt.first_moments().at(k));
    ck.load_into(prefix + "/" + params[k]->name + ".v", opt.second_moments().at(k));
  }
  opt.set_steps(ck.meta.at(prefix + "_steps").get<std::int64_t>());
}

}  // namespace earlystop::nk
