#include <fcntl.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "poe/expcli.hpp"

namespace poe::exp {

std::string blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw RuntimeFailure("sha1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_blob_hash(const fs::path& path) { return blob_hash(read_file(path)); }

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw RuntimeFailure("cannot create run directory " + run_dir.string() + ": " + ec.message());
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw ValidationError("run directory " + run_dir.string() +
                            " is locked by another invocation (remove " + path_.string() + " if it is stale)");
    }
    throw RuntimeFailure("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  (void)!::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Staging::~Staging() {
  if (committed_) return;
  std::error_code ec;
  for (const auto& t : temps_) fs::remove(t, ec);
}

void Staging::put(const std::string& rel, const std::string& content) {
  const fs::path target = run_dir_ / rel;
  const fs::path tmp = target.string() + ".tmp";
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  if (ec) throw RuntimeFailure("cannot create " + target.parent_path().string() + ": " + ec.message());
  temps_.push_back(tmp);
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw RuntimeFailure("write failed: " + tmp.string());
  artifacts_.push_back(Artifact{rel, content.size(), blob_hash(content)});
}

void Staging::commit(const std::string& manifest_name, Json& manifest) {
  Json list = Json::array();
  for (const auto& a : artifacts_) list.push_back(Json{{"path", a.path}, {"size", a.size}, {"hash", a.hash}});
  manifest["artifacts"] = std::move(list);
  put("manifests/" + manifest_name + ".json", manifest.dump(2) + "\n");
  for (const auto& t : temps_) {
    std::string final_path = t.string();
    final_path.resize(final_path.size() - 4);
    std::error_code ec;
    fs::rename(t, final_path, ec);
    if (ec) throw RuntimeFailure("cannot move " + t.string() + " into place: " + ec.message());
  }
  committed_ = true;
}

}  // namespace poe::exp
