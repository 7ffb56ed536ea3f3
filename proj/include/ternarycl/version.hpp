// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace ternarycl {

/// `git describe --always --dirty` of the source tree at configure time.
const char* build_version();

}  // namespace ternarycl
