#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "udit/common.hpp"
#include "udit/sha256.hpp"

using udit::Sha256;
using udit::sha256_file_hex;
using udit::sha256_hex;

TEST_SUITE("sha256") {

TEST_CASE("standard digest vectors") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("The quick brown fox jumps over the lazy dog") ==
        "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
  // Length 56 exercises the two-block padding path.
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  CHECK(sha256_hex(std::string(1000000, 'a')) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("chunked updates match one-shot hashing") {
  std::string msg;
  for (int i = 0; i < 1000; ++i) msg += char('a' + i % 26);
  Sha256 h;
  size_t off = 0;
  size_t chunk = 1;
  while (off < msg.size()) {
    size_t take = std::min(chunk, msg.size() - off);
    h.update(msg.data() + off, take);
    off += take;
    chunk = chunk * 2 + 1;
  }
  CHECK(h.hex_digest() == sha256_hex(msg));
}

TEST_CASE("file digest equals string digest") {
  std::string path = "sha_test_tmp.bin";
  std::string payload = "payload with\nnewlines\0and zero", full(payload);
  {
    std::ofstream f(path, std::ios::binary);
    f.write(full.data(), std::streamsize(full.size()));
  }
  CHECK(sha256_file_hex(path) == sha256_hex(full));
  std::remove(path.c_str());
}

TEST_CASE("missing file raises an I/O error") {
  CHECK_THROWS_AS(sha256_file_hex("definitely/not/here.bin"), udit::IoError);
}

}  // TEST_SUITE
