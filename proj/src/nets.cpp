#include "udit/nets.hpp"

namespace udit::nets {

int domain_index(char domain) {
  if (domain == 'A' || domain == 'a') return 0;
  if (domain == 'B' || domain == 'b') return 1;
  fail<ConfigError>("domain must be 'A' or 'B', got '", domain, "'");
}

char domain_letter(int index) {
  require<ConfigError>(index == 0 || index == 1,
                       "domain index must be 0 or 1, got ", index);
  return index == 0 ? 'A' : 'B';
}

}  // namespace udit::nets
