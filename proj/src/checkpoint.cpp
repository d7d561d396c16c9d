#include "eventlm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace eventlm::ckpt {

namespace {

static_assert(__BYTE_ORDER__ == __ORDER_LITTLE_ENDIAN__,
              "the checkpoint format stores raw little-endian scalars");

constexpr char kMagic[8] = {'E', 'V', 'L', 'M', 'C', 'K', 'P', 'T'};

const char* kind_name(std::uint32_t kind) {
  if (kind == kKindReactive) return "reactive";
  if (kind == kKindBaseline) return "baseline";
  return "unknown";
}

void put_u32(std::string& buf, std::uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::string& buf, std::uint64_t v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

// The body (everything between magic and trailing checksum), parsed with
// bounds checks; truncation that slips past the checksum still errors.
struct Reader {
  const unsigned char* data;
  std::size_t size;
  std::size_t off = 0;

  void need(std::size_t k, const char* what) {
    if (off + k > size)
      throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, data + off, 4);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, data + off, 8);
    off += 8;
    return v;
  }
  std::string bytes(std::size_t k, const char* what) {
    need(k, what);
    std::string v(reinterpret_cast<const char*>(data + off), k);
    off += k;
    return v;
  }
};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return file;
}

Header parse_header(const std::vector<unsigned char>& file, const std::string& path,
                    Reader& body) {
  if (file.size() < sizeof kMagic + 8 ||
      std::memcmp(file.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");

  std::uint64_t stored;
  std::memcpy(&stored, file.data() + file.size() - 8, 8);
  std::uint64_t actual = crc64(file.data() + sizeof kMagic, file.size() - sizeof kMagic - 8);
  if (stored != actual) {
    std::ostringstream msg;
    msg << "checkpoint: checksum mismatch in " << path << " (stored " << std::hex << stored
        << ", computed " << actual << "); file is corrupted, nothing was loaded";
    throw std::runtime_error(msg.str());
  }

  body = Reader{file.data() + sizeof kMagic, file.size() - sizeof kMagic - 8};
  std::uint32_t version = body.u32("format version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                             " unsupported (this build reads version " + std::to_string(kVersion) +
                             ")");
  Header h;
  h.kind = body.u32("model kind");
  std::uint64_t config_len = body.u64("config length");
  h.cfg = ModelConfig::from_json_text(body.bytes(config_len, "config"));
  h.rng_key = body.u64("rng key");
  h.rng_counter = body.u64("rng counter");
  return h;
}

}  // namespace

void save(const std::string& path, std::uint32_t kind, const ModelConfig& cfg,
          const ParamList& params, const Rng& rng) {
  std::string body;
  put_u32(body, kVersion);
  put_u32(body, kind);
  std::string config = cfg.canonical_json();
  put_u64(body, config.size());
  body += config;
  put_u64(body, rng.key());
  put_u64(body, rng.counter());
  put_u64(body, params.size());
  for (const auto& [name, t] : params) {
    if (t.dtype() != DType::F64)
      throw std::logic_error("checkpoint: parameter " + name + " is not float64");
    put_u64(body, name.size());
    body += name;
    put_u64(body, static_cast<std::uint64_t>(t.rows()));
    put_u64(body, static_cast<std::uint64_t>(t.cols()));
    std::vector<double> values = t.to_vector();
    body.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  std::uint64_t crc = crc64(reinterpret_cast<const unsigned char*>(body.data()), body.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
  out.flush();
  if (!out) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

Header read_header(const std::string& path) {
  std::vector<unsigned char> file = read_file(path);
  Reader body{nullptr, 0};
  return parse_header(file, path, body);
}

void load_params(const std::string& path, std::uint32_t kind, const ModelConfig& expected,
                 const ParamList& params, Rng& rng) {
  std::vector<unsigned char> file = read_file(path);
  Reader body{nullptr, 0};
  Header h = parse_header(file, path, body);

  if (h.kind != kind)
    throw std::runtime_error(std::string("checkpoint: ") + path + " holds a " +
                             kind_name(h.kind) + " model, expected " + kind_name(kind));
  if (h.cfg.hash() != expected.hash()) {
    std::ostringstream msg;
    msg << "checkpoint: config hash mismatch (checkpoint " << std::hex << h.cfg.hash()
        << ", model " << expected.hash() << "); refusing to load";
    throw std::runtime_error(msg.str());
  }

  std::uint64_t n = body.u64("array count");
  if (n != params.size())
    throw std::runtime_error("checkpoint: holds " + std::to_string(n) + " arrays, model has " +
                             std::to_string(params.size()));

  // parse and validate everything before touching the model
  std::vector<std::vector<double>> staged(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::uint64_t name_len = body.u64("array name length");
    std::string name = body.bytes(name_len, "array name");
    const auto& [expected_name, t] = params[i];
    if (name != expected_name)
      throw std::runtime_error("checkpoint: array " + std::to_string(i) + " is named '" + name +
                               "', model expects '" + expected_name + "'");
    std::uint64_t rows = body.u64("array rows");
    std::uint64_t cols = body.u64("array cols");
    if (rows != static_cast<std::uint64_t>(t.rows()) ||
        cols != static_cast<std::uint64_t>(t.cols()))
      throw std::runtime_error("checkpoint: array '" + name + "' has shape [" +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               "], model expects " + t.shape_str());
    std::size_t count = static_cast<std::size_t>(rows * cols);
    body.need(count * sizeof(double), "array data");
    staged[i].resize(count);
    std::memcpy(staged[i].data(), body.data + body.off, count * sizeof(double));
    body.off += count * sizeof(double);
  }
  if (body.off != body.size)
    throw std::runtime_error("checkpoint: " + std::to_string(body.size - body.off) +
                             " trailing bytes after the last array");

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;  // handle copy, same storage
    std::int64_t cols = t.cols();
    for (std::int64_t r = 0; r < t.rows(); ++r)
      for (std::int64_t c = 0; c < cols; ++c)
        t.set(r, c, staged[i][static_cast<std::size_t>(r * cols + c)]);
  }
  rng = Rng::restore(h.rng_key, h.rng_counter);
}

}  // namespace eventlm::ckpt
