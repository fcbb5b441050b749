#include "sqnt/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sqnt/quant.hpp"

namespace sqnt {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'N', 'T'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("truncated container");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

void RecordFile::put(const std::string& name, const Tensor& t, DType dtype) {
  if (dtype == DType::i32) throw std::invalid_argument("put: use put_ints for integer records");
  Record r;
  r.name = name;
  r.dtype = dtype;
  r.dims = t.shape();
  r.reals.assign(t.values().begin(), t.values().end());
  if (dtype == DType::f32) {
    for (auto& v : r.reals) v = static_cast<double>(static_cast<float>(v));
  }
  for (auto& existing : records_) {
    if (existing.name == name) {
      existing = std::move(r);
      return;
    }
  }
  records_.push_back(std::move(r));
}

void RecordFile::put_ints(const std::string& name, Shape dims, std::vector<std::int32_t> values) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(dims)) {
    throw ShapeError("put_ints: size mismatch for " + name);
  }
  Record r;
  r.name = name;
  r.dtype = DType::i32;
  r.dims = std::move(dims);
  r.ints = std::move(values);
  for (auto& existing : records_) {
    if (existing.name == name) {
      existing = std::move(r);
      return;
    }
  }
  records_.push_back(std::move(r));
}

const Record* RecordFile::find(const std::string& name) const {
  for (const auto& r : records_)
    if (r.name == name) return &r;
  return nullptr;
}

Tensor RecordFile::tensor(const std::string& name) const {
  const Record* r = find(name);
  if (!r) throw FormatError("missing record '" + name + "'");
  if (r->dtype == DType::i32) {
    std::vector<double> v(r->ints.begin(), r->ints.end());
    return Tensor(r->dims, std::move(v));
  }
  return Tensor(r->dims, r->reals);
}

std::vector<std::int32_t> RecordFile::ints(const std::string& name) const {
  const Record* r = find(name);
  if (!r) throw FormatError("missing record '" + name + "'");
  if (r->dtype != DType::i32) throw FormatError("record '" + name + "' is not i32");
  return r->ints;
}

double RecordFile::scalar(const std::string& name) const {
  const Tensor t = tensor(name);
  if (t.numel() != 1) throw FormatError("record '" + name + "' is not a scalar");
  return t[0];
}

std::string RecordFile::serialize() const {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint64_t>(out, fingerprint);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    out.push_back(static_cast<char>(r.dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    switch (r.dtype) {
      case DType::f32:
        for (double v : r.reals) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        break;
      case DType::f64:
        for (double v : r.reals) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        break;
      case DType::i32:
        for (auto v : r.ints) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
        break;
    }
  }
  return out;
}

RecordFile RecordFile::deserialize(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(4) != std::string(kMagic, 4)) throw FormatError("not an SQNT container (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  RecordFile f;
  f.fingerprint = in.get<std::uint64_t>();
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    r.name = in.str(in.get<std::uint32_t>());
    const auto tag = in.get<std::uint8_t>();
    if (tag < 1 || tag > 3) throw FormatError("record '" + r.name + "': unknown dtype");
    r.dtype = static_cast<DType>(tag);
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw FormatError("record '" + r.name + "': implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) r.dims.push_back(static_cast<std::int64_t>(in.get<std::uint64_t>()));
    const auto n = static_cast<std::size_t>(shape_numel(r.dims));
    switch (r.dtype) {
      case DType::f32:
        for (std::size_t k = 0; k < n; ++k) r.reals.push_back(std::bit_cast<float>(in.get<std::uint32_t>()));
        break;
      case DType::f64:
        for (std::size_t k = 0; k < n; ++k) r.reals.push_back(std::bit_cast<double>(in.get<std::uint64_t>()));
        break;
      case DType::i32:
        for (std::size_t k = 0; k < n; ++k) r.ints.push_back(static_cast<std::int32_t>(in.get<std::uint32_t>()));
        break;
    }
    f.records_.push_back(std::move(r));
  }
  if (!in.done()) throw FormatError("trailing bytes after last record");
  return f;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void RecordFile::put_text(const std::string& name, const std::string& text) {
  std::vector<std::int32_t> bytes;
  for (unsigned char c : text) bytes.push_back(c);
  const auto n = static_cast<std::int64_t>(bytes.size());
  put_ints(name, {n}, std::move(bytes));
}

std::string RecordFile::text(const std::string& name) const {
  std::string out;
  for (auto b : ints(name)) {
    if (b < 0 || b > 255) throw FormatError("record " + name + " is not text");
    out += static_cast<char>(b);
  }
  return out;
}

void RecordFile::save(const std::string& path) const { write_file_atomic(path, serialize()); }

RecordFile RecordFile::load(const std::string& path) { return deserialize(read_file(path)); }

// ---------------------------------------------------------------------------

namespace {

constexpr int kSpecFields = 14;

std::vector<double> encode_spec(const BlockSpec& s) {
  return {static_cast<double>(s.kind),
          static_cast<double>(s.channels_in),
          static_cast<double>(s.channels_out),
          static_cast<double>(s.kernel_size),
          s.h,
          s.quant_weights ? 1.0 : 0.0,
          s.quant_activations ? 1.0 : 0.0,
          s.tv_gamma ? 1.0 : 0.0,
          s.tv_gamma.value_or(0.0),
          s.tv_eps,
          static_cast<double>(s.stride),
          static_cast<double>(s.update),
          static_cast<double>(s.expansion),
          s.node_level ? 1.0 : 0.0};
}

BlockSpec decode_spec(const double* f) {
  BlockSpec s;
  s.kind = static_cast<BlockKind>(static_cast<int>(f[0]));
  s.channels_in = static_cast<int>(f[1]);
  s.channels_out = static_cast<int>(f[2]);
  s.kernel_size = static_cast<int>(f[3]);
  s.h = f[4];
  s.quant_weights = f[5] != 0.0;
  s.quant_activations = f[6] != 0.0;
  if (f[7] != 0.0) s.tv_gamma = f[8];
  s.tv_eps = f[9];
  s.stride = static_cast<int>(f[10]);
  s.update = static_cast<BlockKind>(static_cast<int>(f[11]));
  s.expansion = static_cast<int>(f[12]);
  s.node_level = f[13] != 0.0;
  return s;
}

}  // namespace

std::vector<BlockSpec> decode_architecture(const RecordFile& file) {
  const Tensor arch = file.tensor("arch");
  if (arch.rank() != 2 || arch.dim(1) != kSpecFields) throw FormatError("malformed arch record");
  std::vector<BlockSpec> specs;
  for (std::int64_t i = 0; i < arch.dim(0); ++i) specs.push_back(decode_spec(arch.data() + i * kSpecFields));
  return specs;
}

RecordFile make_checkpoint(Network& net, const CheckpointMeta& meta) {
  RecordFile f;
  f.fingerprint = net.fingerprint();
  std::vector<double> arch;
  for (const auto& s : net.specs()) {
    const auto e = encode_spec(s);
    arch.insert(arch.end(), e.begin(), e.end());
  }
  f.put("arch", Tensor({static_cast<std::int64_t>(net.specs().size()), kSpecFields}, arch));
  f.put_scalar("meta.bits_w", meta.bits_w);
  f.put_scalar("meta.bits_a", meta.bits_a);
  f.put_scalar("meta.storage", static_cast<double>(meta.storage));
  for (const auto& p : net.parameters()) f.put(p.name, p.var.value(), meta.storage);
  std::vector<std::int32_t> ready;
  for (auto* q : net.quantizers()) ready.push_back(q->initialized() ? 1 : 0);
  f.put_ints("meta.act_ready", {static_cast<std::int64_t>(ready.size())}, ready);
  if (meta.bits_w < 32) {
    ForwardContext ctx;
    ctx.bits_w = meta.bits_w;
    for (Kernel* k : net.kernels()) {
      if (!k->quantized()) continue;
      // Stored weights may be f32-rounded; quantize what a reload will see.
      const Tensor w = meta.storage == DType::f32 ? k->weight().value().rounded_to_f32()
                                                  : k->weight().value();
      const double alpha = meta.storage == DType::f32
                               ? static_cast<double>(static_cast<float>(k->alpha().value()[0]))
                               : k->alpha().value()[0];
      const Tensor wq = fake_quant(normalize_weights(w), QuantParams{meta.bits_w, Signedness::Signed, alpha, true});
      f.put(k->name() + ".wq", wq);
    }
  }
  return f;
}

void save_checkpoint(Network& net, const std::string& path, const CheckpointMeta& meta) {
  make_checkpoint(net, meta).save(path);
}

void load_parameters(Network& net, const RecordFile& file) {
  if (file.fingerprint != net.fingerprint()) {
    throw FormatError("checkpoint architecture fingerprint does not match the network");
  }
  for (auto& p : net.parameters()) {
    Tensor t = file.tensor(p.name);
    if (t.shape() != p.var.shape()) {
      throw FormatError("record '" + p.name + "' has shape " + shape_str(t.shape()) +
                        ", expected " + shape_str(p.var.shape()));
    }
    p.var.mutable_value() = std::move(t);
  }
  const auto quants = net.quantizers();
  const auto ready = file.ints("meta.act_ready");
  if (ready.size() != quants.size()) throw FormatError("quantizer count mismatch");
  for (std::size_t i = 0; i < quants.size(); ++i) {
    if (ready[i]) quants[i]->set_alpha(quants[i]->alpha().value()[0]);
  }
}

LoadedCheckpoint load_checkpoint(const RecordFile& file) {
  auto specs = decode_architecture(file);
  if (Network::fingerprint_of(specs) != file.fingerprint) {
    throw FormatError("architecture record does not match the stored fingerprint");
  }
  LoadedCheckpoint lc{Network::build(std::move(specs), 0), {}, file};
  load_parameters(lc.net, file);
  lc.meta.bits_w = static_cast<int>(file.scalar("meta.bits_w"));
  lc.meta.bits_a = static_cast<int>(file.scalar("meta.bits_a"));
  lc.meta.storage = static_cast<DType>(static_cast<int>(file.scalar("meta.storage")));
  return lc;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  return load_checkpoint(RecordFile::load(path));
}

}  // namespace sqnt
