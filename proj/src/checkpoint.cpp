#include "tpvocc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tpvocc {

namespace {

constexpr char kMagic[8] = {'T', 'P', 'V', 'O', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
  put_i64(os, (int64_t)s.size());
  os.write(s.data(), (std::streamsize)s.size());
}
void put_doubles(std::ostream& os, const double* p, int64_t n) {
  os.write(reinterpret_cast<const char*>(p), (std::streamsize)(n * 8));
}

struct Reader {
  std::ifstream in;
  std::string path;

  void need(int64_t bytes, const std::string& field) {
    if (!in) fail(field);
    (void)bytes;
  }
  [[noreturn]] void fail(const std::string& field) {
    throw DataError("checkpoint '" + path + "': truncated or corrupt while reading " + field);
  }
  uint32_t u32(const std::string& field) {
    uint32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) fail(field);
    return v;
  }
  int64_t i64(const std::string& field) {
    int64_t v;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) fail(field);
    return v;
  }
  std::string str(const std::string& field) {
    const int64_t n = i64(field + ".len");
    if (n < 0 || n > (int64_t)1e9) fail(field + ".len");
    std::string s((size_t)n, '\0');
    in.read(s.data(), n);
    if (!in) fail(field);
    return s;
  }
  void doubles(double* p, int64_t n, const std::string& field) {
    in.read(reinterpret_cast<char*>(p), n * 8);
    if (!in) fail(field);
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamStore& params, nn::AdamW* opt,
                     const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_str(os, meta.role);
  put_i64(os, meta.epoch);
  put_i64(os, meta.opt_step);
  put_str(os, meta.config_json);

  put_i64(os, (int64_t)params.entries().size());
  for (const auto& e : params.entries()) {
    put_str(os, e.name);
    const auto& shape = e.var.val().shape();
    put_u32(os, (uint32_t)shape.size());
    for (int d : shape) put_i64(os, d);
    put_doubles(os, e.var.val().data(), e.var.val().numel());
  }

  put_u32(os, opt ? 1u : 0u);
  if (opt) {
    for (size_t i = 0; i < params.entries().size(); ++i) {
      put_doubles(os, opt->moments_m()[i].data(), opt->moments_m()[i].numel());
      put_doubles(os, opt->moments_v()[i].data(), opt->moments_v()[i].numel());
    }
  }
  if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

namespace {
CheckpointMeta read_header(Reader& r) {
  char magic[8];
  r.in.read(magic, 8);
  if (!r.in || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("checkpoint '" + r.path + "': bad magic (not a checkpoint file)");
  const uint32_t version = r.u32("version");
  if (version != kVersion)
    throw DataError("checkpoint '" + r.path + "': unsupported version " +
                    std::to_string(version));
  CheckpointMeta meta;
  meta.role = r.str("role");
  meta.epoch = (int)r.i64("epoch");
  meta.opt_step = r.i64("opt_step");
  meta.config_json = r.str("config");
  return meta;
}
}  // namespace

CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore& params, nn::AdamW* opt) {
  Reader r;
  r.path = path;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw DataError("checkpoint: cannot open '" + path + "'");
  CheckpointMeta meta = read_header(r);

  const int64_t n = r.i64("param_count");
  if (n != (int64_t)params.entries().size())
    throw DataError("checkpoint '" + path + "': parameter count mismatch (file " +
                    std::to_string(n) + ", model " + std::to_string(params.entries().size()) +
                    ")");
  for (int64_t i = 0; i < n; ++i) {
    auto& e = params.entries()[(size_t)i];
    const std::string field = "params[" + std::to_string(i) + "]";
    const std::string name = r.str(field + ".name");
    if (name != e.name)
      throw DataError("checkpoint '" + path + "': parameter '" + name + "' where '" + e.name +
                      "' was expected");
    const uint32_t nd = r.u32(field + ".ndim");
    std::vector<int> shape((size_t)nd);
    for (uint32_t d = 0; d < nd; ++d) shape[d] = (int)r.i64(field + ".dim");
    if (shape != e.var.val().shape())
      throw DataError("checkpoint '" + path + "': shape mismatch for '" + name + "'");
    r.doubles(e.var.node()->value.data(), e.var.val().numel(), field + ".data");
  }

  const uint32_t has_opt = r.u32("has_optimizer");
  if (opt) {
    if (!has_opt)
      throw DataError("checkpoint '" + path + "': no optimizer state (cannot resume)");
    for (size_t i = 0; i < params.entries().size(); ++i) {
      const std::string field = "moments[" + std::to_string(i) + "]";
      r.doubles(opt->moments_m()[i].data(), opt->moments_m()[i].numel(), field + ".m");
      r.doubles(opt->moments_v()[i].data(), opt->moments_v()[i].numel(), field + ".v");
    }
    opt->set_step_count(meta.opt_step);
  }
  return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  Reader r;
  r.path = path;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw DataError("checkpoint: cannot open '" + path + "'");
  return read_header(r);
}

}  // namespace tpvocc
