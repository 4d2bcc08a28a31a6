#include "eqvs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "eqvs/digest.hpp"

namespace eqvs {

namespace {

void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw CheckpointError(std::string("checkpoint ") + what + " must be a non-empty token without whitespace");
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  check_token(ckpt.kind, "kind");
  check_token(ckpt.digest, "digest");
  if (ckpt.meta.find('\n') != std::string::npos) throw CheckpointError("checkpoint meta must be one line");
  std::ostringstream os;
  os << "EQVS-CHECKPOINT " << Checkpoint::kVersion << '\n'
     << "kind " << ckpt.kind << '\n'
     << "digest " << ckpt.digest << '\n'
     << "meta " << ckpt.meta << '\n';
  for (grad::Index i = 0; i < ckpt.params.size(); ++i) {
    check_token(ckpt.params.name(i), "tensor name");
    const auto& shape = ckpt.params.value(i).shape();
    os << "tensor " << ckpt.params.name(i) << ' ' << shape.size();
    for (auto d : shape) os << ' ' << d;
    os << '\n';
  }
  os << "end\n";
  std::string out = os.str();
  for (grad::Index i = 0; i < ckpt.params.size(); ++i) {
    const auto& data = ckpt.params.value(i).data();
    for (grad::Index k = 0; k < data.size(); ++k) {
      const auto bits = std::bit_cast<std::uint32_t>(data[k]);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  auto bad = [&](const std::string& what) { return CheckpointError(origin + ": " + what); };
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw bad("truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  auto field = [&](const std::string& key) {
    std::string line = next_line();
    if (line.rfind(key + ' ', 0) != 0) throw bad("expected '" + key + "' line");
    return line.substr(key.size() + 1);
  };

  const std::string magic = field("EQVS-CHECKPOINT");
  if (magic != std::to_string(Checkpoint::kVersion)) throw bad("unsupported checkpoint version " + magic);
  Checkpoint ckpt;
  ckpt.kind = field("kind");
  ckpt.digest = field("digest");
  ckpt.meta = field("meta");

  std::vector<std::pair<std::string, grad::Shape>> entries;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    std::istringstream ls(line);
    std::string tag, name;
    std::size_t rank = 0;
    if (!(ls >> tag >> name >> rank) || tag != "tensor") throw bad("malformed tensor line '" + line + "'");
    grad::Shape shape(rank);
    for (auto& d : shape) {
      if (!(ls >> d) || d < 0) throw bad("malformed shape for '" + name + "'");
    }
    entries.emplace_back(name, shape);
  }
  for (const auto& [name, shape] : entries) {
    const grad::Index n = grad::shape_size(shape);
    if (bytes.size() - pos < static_cast<std::size_t>(4 * n)) throw bad("truncated data for '" + name + "'");
    Eigen::VectorXf v(n);
    for (grad::Index k = 0; k < n; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(bytes[pos++])) << (8 * b);
      v[k] = std::bit_cast<float>(bits);
    }
    ckpt.params.add(name, grad::Tensor<float>(shape, std::move(v)));
  }
  if (pos != bytes.size()) throw bad("trailing bytes after tensor data");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(bytes, path);
}

}  // namespace eqvs
