#pragma once

#include <openssl/evp.h>

#include <fstream>
#include <sstream>
#include <string>

#include "skiff/common.hpp"

namespace skiff {

inline std::string sha1_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, size, digest, &digest_len, EVP_sha1(), nullptr) != 1)
    throw RunError("sha1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// Git blob object id of the given content.
inline std::string git_blob_sha1(const std::string& content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  return sha1_hex(blob.data(), blob.size());
}

inline std::string git_blob_sha1_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return git_blob_sha1(os.str());
}

}  // namespace skiff
