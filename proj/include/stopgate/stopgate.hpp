#pragma once
// Umbrella header: pulls in the whole library.

#include "stopgate/cfgen.hpp"
#include "stopgate/chatfmt.hpp"
#include "stopgate/core.hpp"
#include "stopgate/eval.hpp"
#include "stopgate/features.hpp"
#include "stopgate/hash.hpp"
#include "stopgate/io.hpp"
#include "stopgate/labeling.hpp"
#include "stopgate/net.hpp"
#include "stopgate/parallel.hpp"
#include "stopgate/policy.hpp"
#include "stopgate/rng.hpp"
#include "stopgate/segment.hpp"
