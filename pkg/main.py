import asyncio
import logging
import sys

import config
from app.handlers.commands import dispatch


async def main():
    """Entry point of the mfris-est command line."""
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format=config.LOG_FORMAT
    )
    return await dispatch(sys.argv[1:])


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logging.info("Stopped manually.")
        sys.exit(130)
