// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/version.hpp"

#ifndef TERNARYCL_GIT_DESCRIBE
#define TERNARYCL_GIT_DESCRIBE "unknown"
#endif

namespace ternarycl {

const char* build_version() { return TERNARYCL_GIT_DESCRIBE; }

}  // namespace ternarycl
