#pragma once

#include "autolycus/attack.hpp"
#include "autolycus/data.hpp"
#include "autolycus/error.hpp"
#include "autolycus/eval.hpp"
#include "autolycus/explain.hpp"
#include "autolycus/service.hpp"
#include "autolycus/synth.hpp"
#include "autolycus/tree.hpp"
