#include "doctest.h"

#include "iontrap/geometry.hpp"

using namespace iontrap;

TEST_CASE("placeholder") { CHECK(builtin_surface_trap().size() == 45); }
