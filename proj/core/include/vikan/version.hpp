#pragma once

namespace vikan {

const char* version();

}  // namespace vikan
