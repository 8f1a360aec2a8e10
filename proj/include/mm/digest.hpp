#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mm {

// SHA-256 as lowercase hex.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

// Incremental hasher for digesting several buffers as one stream.
class Sha256 {
  public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    void update(const void* data, size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::string hex();  // finalizes; call once

  private:
    void* ctx_;
};

}  // namespace mm
