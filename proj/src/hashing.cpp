#include "lead/hashing.hpp"

#include <string>

namespace lead {

Vid peer_hash(std::string_view address, int port, const RingSpace& ring) {
  std::string text(address);
  text += ':';
  text += std::to_string(port);
  return Vid{ring.wrap(fmix64(fnv1a64(text)))};
}

HashValue uniform_key_hash(Key key, const RingSpace& ring) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((key >> (8 * i)) & 0xff);
  return ring.wrap(fmix64(fnv1a64(std::string_view(bytes, 8))));
}

}  // namespace lead
