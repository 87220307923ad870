#pragma once

#include "ep2/archcalc.hpp"
#include "ep2/descriptor.hpp"
#include "ep2/detection.hpp"
#include "ep2/distill.hpp"
#include "ep2/error.hpp"
#include "ep2/harness.hpp"
#include "ep2/io.hpp"
