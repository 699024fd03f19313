#include "evparse/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace evparse {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr char kMagic[8] = {'E', 'V', 'P', 'C', 'K', 'P', 'T', '1'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

ordered_json config_to_json(const ParserConfig& config) {
  ordered_json j;
  j["flavor"] = std::string(flavor_name(config.flavor));
  j["d_embed"] = config.d_embed;
  j["d_query"] = config.d_query;
  j["queries_per_token"] = config.queries_per_token;
  j["n_query_layers"] = config.n_query_layers;
  j["n_heads"] = config.n_heads;
  j["anchor_threshold"] = config.anchor_threshold;
  j["edge_threshold"] = config.edge_threshold;
  j["loss_node"] = config.loss_node;
  j["loss_anchor"] = config.loss_anchor;
  j["loss_edge_presence"] = config.loss_edge_presence;
  j["loss_edge_label"] = config.loss_edge_label;
  j["seed"] = config.seed;
  j["learning_rate"] = config.learning_rate;
  j["lr_decay"] = config.lr_decay;
  j["warmup_steps"] = config.warmup_steps;
  j["batch_size"] = config.batch_size;
  j["epochs"] = config.epochs;
  j["dropout"] = config.dropout;
  return j;
}

ParserConfig config_from_json(const json& j) {
  ParserConfig config;
  auto flavor = flavor_from_name(j.at("flavor").get<std::string>());
  if (!flavor) throw CheckpointError("unknown flavor in checkpoint header");
  config.flavor = *flavor;
  config.d_embed = j.at("d_embed").get<std::size_t>();
  config.d_query = j.at("d_query").get<std::size_t>();
  config.queries_per_token = j.at("queries_per_token").get<std::size_t>();
  config.n_query_layers = j.at("n_query_layers").get<std::size_t>();
  config.n_heads = j.at("n_heads").get<std::size_t>();
  config.anchor_threshold = j.at("anchor_threshold").get<double>();
  config.edge_threshold = j.at("edge_threshold").get<double>();
  config.loss_node = j.at("loss_node").get<double>();
  config.loss_anchor = j.at("loss_anchor").get<double>();
  config.loss_edge_presence = j.at("loss_edge_presence").get<double>();
  config.loss_edge_label = j.at("loss_edge_label").get<double>();
  config.seed = j.at("seed").get<std::uint64_t>();
  config.learning_rate = j.at("learning_rate").get<double>();
  config.lr_decay = j.at("lr_decay").get<double>();
  config.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  config.batch_size = j.at("batch_size").get<std::size_t>();
  config.epochs = j.at("epochs").get<std::size_t>();
  config.dropout = j.at("dropout").get<double>();
  return config;
}

class Reader {
 public:
  Reader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& message) const {
    throw CheckpointError(path_ + " @ byte " + std::to_string(offset_) + ": " +
                          message);
  }

  void expect(std::size_t n, const char* what) const {
    if (data_.size() - offset_ < n)
      fail("truncated " + std::string(what));
  }

  std::uint16_t u16() {
    expect(2, "u16");
    auto v = static_cast<std::uint16_t>(
        static_cast<std::uint8_t>(data_[offset_]) |
        (static_cast<std::uint8_t>(data_[offset_ + 1]) << 8));
    offset_ += 2;
    return v;
  }

  std::uint32_t u32() {
    expect(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[offset_ + i]))
           << (8 * i);
    offset_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(std::size_t n, const char* what) {
    expect(n, what);
    std::string out = data_.substr(offset_, n);
    offset_ += n;
    return out;
  }

  std::size_t remaining() const { return data_.size() - offset_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ParserModel& model,
                     std::size_t epoch) {
  ordered_json header;
  header["format_version"] = 1;
  header["config"] = config_to_json(model.config());
  if (const ToyEncoderConfig* enc = model.encoder_config()) {
    header["encoder"] = {{"vocab_size", enc->vocab_size},
                         {"dim", enc->dim},
                         {"n_layers", enc->n_layers},
                         {"n_heads", enc->n_heads},
                         {"dropout", enc->dropout},
                         {"max_len", enc->max_len}};
    header["vocab"] = model.vocab().tokens();
  } else {
    header["encoder"] = nullptr;
    header["vocab"] = nullptr;
  }
  header["seed"] = model.config().seed;
  header["epoch"] = epoch;
  std::string header_text = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;

  auto params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const ad::Parameter* p : params) {
    put_u16(out, static_cast<std::uint16_t>(p->name.size()));
    out += p->name;
    put_u32(out, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        put_u32(out, std::bit_cast<std::uint32_t>(
                         static_cast<float>(p->value(r, c))));
      }
    }
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) throw CheckpointError("cannot write \"" + path.string() + "\"");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointError("cannot open \"" + path.string() + "\"");
  std::string data((std::istreambuf_iterator<char>(file)),
                   std::istreambuf_iterator<char>());
  Reader reader(std::move(data), path.string());

  std::string magic = reader.bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    reader.fail("bad magic");

  std::uint32_t header_len = reader.u32();
  json header;
  try {
    header = json::parse(reader.bytes(header_len, "header"));
  } catch (const json::exception& e) {
    reader.fail(std::string("malformed header JSON: ") + e.what());
  }

  ParserConfig config = config_from_json(header.at("config"));
  std::optional<ParserModel> model;
  if (!header.at("encoder").is_null()) {
    const json& enc = header.at("encoder");
    ToyEncoderConfig encoder_config;
    encoder_config.vocab_size = enc.at("vocab_size").get<std::size_t>();
    encoder_config.dim = enc.at("dim").get<std::size_t>();
    encoder_config.n_layers = enc.at("n_layers").get<std::size_t>();
    encoder_config.n_heads = enc.at("n_heads").get<std::size_t>();
    encoder_config.dropout = enc.at("dropout").get<double>();
    encoder_config.max_len = enc.at("max_len").get<std::size_t>();
    Vocabulary vocab = Vocabulary::from_tokens(
        header.at("vocab").get<std::vector<std::string>>());
    model.emplace(config, encoder_config, std::move(vocab));
  } else {
    model.emplace(config);
  }

  std::unordered_map<std::string, ad::Parameter*> by_name;
  for (ad::Parameter* p : model->parameters()) by_name[p->name] = p;

  std::uint32_t count = reader.u32();
  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = reader.u16();
    std::string name = reader.bytes(name_len, "tensor name");
    std::uint32_t rows = reader.u32();
    std::uint32_t cols = reader.u32();
    auto it = by_name.find(name);
    if (it == by_name.end()) reader.fail("unknown tensor \"" + name + "\"");
    ad::Parameter& p = *it->second;
    if (p.value.rows() != static_cast<Eigen::Index>(rows) ||
        p.value.cols() != static_cast<Eigen::Index>(cols)) {
      reader.fail("tensor \"" + name + "\": expected " +
                  std::to_string(p.value.rows()) + "x" +
                  std::to_string(p.value.cols()) + ", file has " +
                  std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        p.value(r, c) = static_cast<double>(reader.f32());
      }
    }
    ++filled;
  }
  if (filled != by_name.size()) {
    reader.fail("checkpoint holds " + std::to_string(filled) + " of " +
                std::to_string(by_name.size()) + " model tensors");
  }
  if (reader.remaining() != 0)
    reader.fail(std::to_string(reader.remaining()) + " trailing bytes");

  LoadedCheckpoint out{std::move(*model), header.at("epoch").get<std::size_t>()};
  return out;
}

}  // namespace evparse
