#include "vikan/version.hpp"

namespace vikan {

const char* version() { return "0.1.0"; }

}  // namespace vikan
