# Suite modules
