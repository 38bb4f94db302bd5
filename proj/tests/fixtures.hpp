#pragma once

#include "conflab/fixtures.hpp"

namespace fixtures = conflab::fixtures;
