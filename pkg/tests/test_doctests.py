import doctest

import queuetx.executor


def test_executor_doctests():
    failed, attempted = doctest.testmod(queuetx.executor)
    assert attempted > 0 and failed == 0
