#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "json.hpp"
#include "supportqa/container.hpp"
#include "supportqa/digest.hpp"
#include "supportqa/serving.hpp"

namespace supportqa {

using nlohmann::json;
namespace fs = std::filesystem;

BindAddress parse_bind(const std::string& text) {
  BindAddress b;
  const auto colon = text.rfind(':');
  std::string host = colon == std::string::npos ? text : text.substr(0, colon);
  if (!host.empty()) b.host = host;
  if (colon != std::string::npos) {
    const std::string port = text.substr(colon + 1);
    char* end = nullptr;
    const long p = std::strtol(port.c_str(), &end, 10);
    if (port.empty() || *end != '\0' || p < 0 || p > 65535) {
      throw ConfigError("bind address '" + text + "': invalid port");
    }
    b.port = static_cast<int>(p);
  }
  return b;
}

BindAddress bind_from_env(const BindAddress& fallback) {
  const char* v = std::getenv(kBindEnv);
  return v && *v ? parse_bind(v) : fallback;
}

fs::path registry_root_from_env(const fs::path& fallback) {
  const char* v = std::getenv(kRegistryEnv);
  return v && *v ? fs::path(v) : fallback;
}

namespace {

void check_name(const std::string& name) {
  const bool ok = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
  if (!ok || name == "." || name == "..") throw ValidationError("registry: invalid model name '" + name + "'");
}

// Holds an exclusive flock on <root>/.lock for its lifetime.
class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("registry: cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw IoError("registry: cannot lock " + path.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::string combined_digest(const std::string& ckpt, const std::string& vocab) {
  return sha256_hex(ckpt + ":" + vocab);
}

}  // namespace

ModelRegistry::ModelRegistry(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw IoError("registry: cannot create " + root_.string() + ": " + ec.message());
  root_ = fs::absolute(root_);
}

std::vector<RegistryEntry> ModelRegistry::read_index() const {
  std::vector<RegistryEntry> out;
  if (!fs::exists(index_path())) return out;
  json j;
  try {
    j = json::parse(read_file(index_path()));
    for (const auto& e : j.at("models")) {
      RegistryEntry r;
      r.name = e.at("name").get<std::string>();
      r.version = e.at("version").get<std::uint64_t>();
      r.checkpoint = root_ / e.at("checkpoint").get<std::string>();
      r.vocab = root_ / e.at("vocab").get<std::string>();
      r.checkpoint_sha256 = e.at("checkpoint_sha256").get<std::string>();
      r.vocab_sha256 = e.at("vocab_sha256").get<std::string>();
      r.digest = e.at("digest").get<std::string>();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError("registry index " + index_path().string() + ": " + e.what());
  }
  return out;
}

std::uint64_t ModelRegistry::register_model(const std::string& name, const fs::path& checkpoint,
                                            const fs::path& vocab) {
  check_name(name);
  const std::string ckpt_bytes = read_file(checkpoint);
  const std::string vocab_bytes = read_file(vocab);

  std::string trained_with;
  const EncoderParams params = encoder_from_container(decode_container(ckpt_bytes), &trained_with);
  const Vocabulary v = Vocabulary::parse(vocab_bytes);
  if (v.size() != params.config.vocab_size) {
    throw ValidationError("registry: vocabulary has " + std::to_string(v.size()) + " tokens but the checkpoint expects " +
                          std::to_string(params.config.vocab_size));
  }
  const std::string vocab_sha = sha256_hex(vocab_bytes);
  if (!trained_with.empty() && trained_with != vocab_sha) {
    throw ValidationError("registry: checkpoint was trained with a different vocabulary");
  }
  const std::string ckpt_sha = sha256_hex(ckpt_bytes);

  std::lock_guard guard(mutex_);
  FileLock lock(root_ / ".lock");
  auto index = read_index();
  std::uint64_t version = 1;
  for (const auto& e : index) {
    if (e.name == name) version = std::max(version, e.version + 1);
  }

  const fs::path rel_dir = fs::path(name) / ("v" + std::to_string(version));
  const fs::path dir = root_ / rel_dir;
  fs::remove_all(dir);  // leftovers of an uncommitted attempt
  fs::create_directories(dir);
  atomic_write_file(dir / "model.ckpt", ckpt_bytes);
  atomic_write_file(dir / "vocab.txt", vocab_bytes);

  if (fault_hook_) fault_hook_();

  RegistryEntry entry{name, version, dir / "model.ckpt", dir / "vocab.txt", ckpt_sha, vocab_sha,
                      combined_digest(ckpt_sha, vocab_sha)};
  index.push_back(entry);
  json models = json::array();
  for (const auto& e : index) {
    models.push_back({{"name", e.name},
                      {"version", e.version},
                      {"checkpoint", fs::relative(e.checkpoint, root_).generic_string()},
                      {"vocab", fs::relative(e.vocab, root_).generic_string()},
                      {"checkpoint_sha256", e.checkpoint_sha256},
                      {"vocab_sha256", e.vocab_sha256},
                      {"digest", e.digest}});
  }
  atomic_write_file(index_path(), json{{"models", models}}.dump(2) + "\n");
  return version;
}

std::vector<RegistryEntry> ModelRegistry::entries() const {
  std::lock_guard guard(mutex_);
  return read_index();
}

std::vector<RegistryEntry> ModelRegistry::versions(const std::string& name) const {
  auto all = entries();
  std::erase_if(all, [&](const RegistryEntry& e) { return e.name != name; });
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.version < b.version; });
  return all;
}

RegistryEntry ModelRegistry::entry(const std::string& name, std::optional<std::uint64_t> version) const {
  const auto vs = versions(name);
  if (vs.empty()) throw ValidationError("registry: no model named '" + name + "'");
  if (!version) return vs.back();
  for (const auto& e : vs) {
    if (e.version == *version) return e;
  }
  throw ValidationError("registry: model '" + name + "' has no version " + std::to_string(*version));
}

LoadedModel ModelRegistry::load(const std::string& name, std::optional<std::uint64_t> version) const {
  LoadedModel m;
  m.entry = entry(name, version);
  const std::string ckpt = read_file(m.entry.checkpoint);
  const std::string vocab = read_file(m.entry.vocab);
  if (sha256_hex(ckpt) != m.entry.checkpoint_sha256) {
    throw DigestError("registry: checkpoint digest mismatch for " + name + " v" + std::to_string(m.entry.version));
  }
  if (sha256_hex(vocab) != m.entry.vocab_sha256) {
    throw DigestError("registry: vocabulary digest mismatch for " + name + " v" + std::to_string(m.entry.version));
  }
  m.params = encoder_from_container(decode_container(ckpt));
  m.vocab = Vocabulary::parse(vocab);
  return m;
}

}  // namespace supportqa
