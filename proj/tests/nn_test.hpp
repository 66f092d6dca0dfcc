#pragma once

// torch's logging headers define CHECK; doctest's must win in test code.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
