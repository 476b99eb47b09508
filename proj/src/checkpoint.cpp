#include "sidforge/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <system_error>

namespace sidforge {
namespace {

constexpr char kMagic[4] = {'S', 'I', 'D', 'F'};
constexpr std::uint32_t kMaxDim = 1u << 20;

using Shape = std::pair<std::uint32_t, std::uint32_t>;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void bytes(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string bytes() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw CorruptionError("checkpoint", "truncated at byte " + std::to_string(pos_));
    }
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

void mlp_shapes(std::initializer_list<std::uint32_t> dims, std::vector<Shape>& out) {
  const std::vector<std::uint32_t> d(dims);
  for (std::size_t i = 0; i + 1 < d.size(); ++i) {
    out.emplace_back(d[i + 1], d[i]);
    out.emplace_back(d[i + 1], 1);
  }
}

// Dims: levels, K, hidden, embedding, recon, decoder hidden, input, vocab.
constexpr std::size_t kUniSidDims = 8;
constexpr std::size_t kCodebookDims = 3;
// Dims: features, hidden, latent, levels, K.
constexpr std::size_t kRqVaeDims = 5;

std::vector<std::uint32_t> unisid_dims(const UniSidModel& m) {
  const auto& c = m.config;
  return {static_cast<std::uint32_t>(c.levels),        static_cast<std::uint32_t>(c.codebook_size),
          static_cast<std::uint32_t>(c.hidden_dim),    static_cast<std::uint32_t>(c.embedding_dim),
          static_cast<std::uint32_t>(c.recon_dim),     static_cast<std::uint32_t>(c.decoder_hidden),
          static_cast<std::uint32_t>(m.input_dim),     static_cast<std::uint32_t>(m.recon.vocab_size())};
}

void unisid_shapes(std::span<const std::uint32_t> d, std::vector<Shape>& out) {
  const std::uint32_t levels = d[0], k = d[1], h = d[2], e = d[3], r = d[4], dh = d[5], in = d[6], v = d[7];
  const std::uint32_t lk = levels * k;
  mlp_shapes({in, h, h}, out);
  mlp_shapes({h, lk}, out);
  mlp_shapes({h + lk, e}, out);
  mlp_shapes({lk + e, r}, out);
  mlp_shapes({r + static_cast<std::uint32_t>(kSummaryLength) * v, dh, v}, out);
}

void codebook_shapes(std::span<const std::uint32_t> d, std::vector<Shape>& out) {
  for (std::uint32_t l = 0; l < d[0]; ++l) out.emplace_back(d[2], d[1]);
}

void rqvae_shapes(std::span<const std::uint32_t> d, std::vector<Shape>& out) {
  const std::uint32_t f = d[0], h = d[1], z = d[2];
  mlp_shapes({f, h, z}, out);
  mlp_shapes({z, h, f}, out);
  const std::uint32_t cb[] = {d[3], d[4], z};
  codebook_shapes(cb, out);
  out.emplace_back(1, 1);  // commitment weight
}

struct TensorRefs {
  std::vector<double*> data;
  std::vector<Shape> shapes;

  void add(Matrix& m) {
    data.push_back(m.data());
    shapes.emplace_back(static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()));
  }
  void add(Vector& v) {
    data.push_back(v.data());
    shapes.emplace_back(static_cast<std::uint32_t>(v.size()), 1);
  }
  void add(Mlp<double>& mlp) {
    for (auto& layer : mlp.layers) {
      add(layer.weight);
      add(layer.bias);
    }
  }
  void add(Codebook& cb) {
    for (auto& c : cb.codewords) add(c);
  }
  void add(UniSidModel& m) {
    add(m.encoder);
    add(m.sid_head);
    add(m.emb_head);
    add(m.recon.recon_head);
    add(m.recon.decoder);
  }
};

struct Layout {
  std::vector<std::uint32_t> dims;
  TensorRefs tensors;
  double beta_slot = 0.0;
  const SummaryVocab* vocab = nullptr;
};

Layout layout_of(UniSidModel& m) {
  Layout out;
  out.dims = unisid_dims(m);
  out.tensors.add(m);
  out.vocab = &m.recon.vocab;
  return out;
}

Layout layout_of(RqKMeansModel& m) {
  Layout out = layout_of(m.embedder);
  out.dims.push_back(static_cast<std::uint32_t>(m.codebook.levels));
  out.dims.push_back(static_cast<std::uint32_t>(m.codebook.codebook_size));
  out.dims.push_back(static_cast<std::uint32_t>(m.codebook.dim));
  out.tensors.add(m.codebook);
  return out;
}

Layout layout_of(RqVaeModel& m) {
  Layout out;
  out.dims = {static_cast<std::uint32_t>(m.encoder.input_dim()), static_cast<std::uint32_t>(m.encoder.layers[0].weight.rows()),
              static_cast<std::uint32_t>(m.encoder.output_dim()), static_cast<std::uint32_t>(m.codebook.levels),
              static_cast<std::uint32_t>(m.codebook.codebook_size)};
  out.tensors.add(m.encoder);
  out.tensors.add(m.decoder);
  out.tensors.add(m.codebook);
  return out;
}

UniSidModel build_unisid(std::span<const std::uint32_t> d, SummaryVocab vocab) {
  UniSidConfig c;
  c.levels = static_cast<int>(d[0]);
  c.codebook_size = static_cast<int>(d[1]);
  c.hidden_dim = static_cast<int>(d[2]);
  c.embedding_dim = static_cast<int>(d[3]);
  c.recon_dim = static_cast<int>(d[4]);
  c.decoder_hidden = static_cast<int>(d[5]);
  return make_unisid_model(c, static_cast<int>(d[6]), std::move(vocab));
}

Codebook build_codebook(std::span<const std::uint32_t> d) {
  Codebook cb;
  cb.levels = static_cast<int>(d[0]);
  cb.codebook_size = static_cast<int>(d[1]);
  cb.dim = static_cast<int>(d[2]);
  for (int l = 0; l < cb.levels; ++l) cb.codewords.push_back(Matrix::Zero(cb.dim, cb.codebook_size));
  return cb;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  Checkpoint copy = checkpoint;
  return std::visit(
      [&](auto& model) {
        Layout layout = layout_of(model);
        std::string out(kMagic, 4);
        Writer body;
        body.u32(kCheckpointVersion);
        body.u32(static_cast<std::uint32_t>(checkpoint.kind()));
        body.u32(static_cast<std::uint32_t>(layout.dims.size()));
        for (auto d : layout.dims) body.u32(d);
        const std::size_t n_tensors = layout.tensors.shapes.size();
        const bool has_beta = checkpoint.kind() == ModelKind::kRqVae;
        body.u32(static_cast<std::uint32_t>(n_tensors + (has_beta ? 1 : 0)));
        for (auto [r, c] : layout.tensors.shapes) {
          body.u32(r);
          body.u32(c);
        }
        if (has_beta) {
          body.u32(1);
          body.u32(1);
        }
        for (std::size_t t = 0; t < n_tensors; ++t) {
          const auto [r, c] = layout.tensors.shapes[t];
          const std::size_t count = static_cast<std::size_t>(r) * c;
          for (std::size_t i = 0; i < count; ++i) body.f32(layout.tensors.data[t][i]);
        }
        if (has_beta) body.f32(std::get<RqVaeModel>(copy.model).beta);
        if (layout.vocab) {
          body.u32(static_cast<std::uint32_t>(layout.vocab->size()));
          for (const auto& token : layout.vocab->tokens()) body.bytes(token);
        } else {
          body.u32(0);
        }
        body.bytes(checkpoint.config_digest);
        return out + body.take();
      },
      copy.model);
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4) throw CorruptionError("checkpoint", "truncated before magic");
  if (bytes.substr(0, 4) != std::string_view(kMagic, 4)) throw FormatError("checkpoint", "bad magic");
  Reader r(bytes.substr(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("checkpoint", "unsupported version " + std::to_string(version));
  const std::uint32_t kind = r.u32();
  std::size_t expected_dims = 0;
  switch (kind) {
    case 1: expected_dims = kUniSidDims; break;
    case 2: expected_dims = kUniSidDims + kCodebookDims; break;
    case 3: expected_dims = kRqVaeDims; break;
    default: throw FormatError("checkpoint", "unknown model kind " + std::to_string(kind));
  }
  const std::uint32_t n_dims = r.u32();
  if (n_dims != expected_dims) throw FormatError("checkpoint", "dimension count does not match model kind");
  std::vector<std::uint32_t> dims(n_dims);
  for (auto& d : dims) {
    d = r.u32();
    if (d == 0 || d > kMaxDim) throw FormatError("checkpoint", "dimension out of range");
  }
  std::vector<Shape> expected;
  if (kind == 1 || kind == 2) unisid_shapes(std::span(dims).first(kUniSidDims), expected);
  if (kind == 2) {
    const auto cb = std::span(dims).subspan(kUniSidDims);
    if (cb[2] != dims[3]) throw FormatError("checkpoint", "codebook dim differs from embedding dim");
    codebook_shapes(cb, expected);
  }
  if (kind == 3) rqvae_shapes(dims, expected);

  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != expected.size()) throw FormatError("checkpoint", "tensor count does not match dims");
  std::size_t total = 0;
  for (std::size_t t = 0; t < n_tensors; ++t) {
    const Shape s{r.u32(), r.u32()};
    if (s != expected[t]) throw FormatError("checkpoint", "tensor " + std::to_string(t) + " shape does not match dims");
    total += static_cast<std::size_t>(s.first) * s.second;
  }
  r.need(4 * total);
  std::vector<double> values(total);
  for (auto& v : values) v = r.f32();

  const std::uint32_t n_vocab = r.u32();
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < n_vocab; ++i) tokens.push_back(r.bytes());
  Checkpoint out;
  out.config_digest = r.bytes();
  if (r.remaining() != 0) throw CorruptionError("checkpoint", "trailing bytes after digest");

  auto fill = [&](Layout layout) {
    std::size_t offset = 0;
    for (std::size_t t = 0; t < layout.tensors.shapes.size(); ++t) {
      const auto [rows, cols] = layout.tensors.shapes[t];
      const std::size_t count = static_cast<std::size_t>(rows) * cols;
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), count, layout.tensors.data[t]);
      offset += count;
    }
    return offset;
  };
  try {
    if (kind == 3) {
      if (n_vocab != 0) throw FormatError("checkpoint", "RQ-VAE checkpoints carry no vocabulary");
      RqVaeConfig c;
      c.hidden_dim = static_cast<int>(dims[1]);
      c.latent_dim = static_cast<int>(dims[2]);
      c.levels = static_cast<int>(dims[3]);
      c.codebook_size = static_cast<int>(dims[4]);
      RqVaeModel m = make_rq_vae_model(static_cast<int>(dims[0]), c);
      const std::size_t used = fill(layout_of(m));
      m.beta = values[used];
      out.model = std::move(m);
    } else {
      if (n_vocab != dims[7]) throw FormatError("checkpoint", "vocabulary size does not match dims");
      UniSidModel unisid = build_unisid(dims, SummaryVocab(std::move(tokens)));
      if (kind == 1) {
        fill(layout_of(unisid));
        out.model = std::move(unisid);
      } else {
        RqKMeansModel m{std::move(unisid), build_codebook(std::span(dims).subspan(kUniSidDims))};
        fill(layout_of(m));
        out.model = std::move(m);
      }
    }
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint", std::string("inconsistent dims: ") + e.what());
  }
  return out;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("io", "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw InputError("io", "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InputError("io", "rename to " + path.string() + " failed: " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("io", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace sidforge
